"""Ghost thresholding, peak fusion and the estimation/classification metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .array_model import AngleGrid, ScenarioConfig, draw_scenario
from .detectors import trial_seed


@dataclass(frozen=True)
class FusedReport:
    detections: tuple
    raw_support: tuple = ()

    @property
    def angles(self) -> np.ndarray:
        return np.array([a for a, _ in self.detections], dtype=float)

    @property
    def powers(self) -> np.ndarray:
        return np.array([p for _, p in self.detections], dtype=float)

    def __len__(self) -> int:
        return len(self.detections)


@dataclass
class TrialMetrics:
    hausdorff_deg: float
    n_missed: int
    n_ghosts: int
    declared_order: int
    aoa_errors_deg: list = field(default_factory=list)


FUSION_MODES = ("partition", "sliding")


def _groups(support, card, mode):
    if mode == "partition":
        labels = support // card
        cuts = np.flatnonzero(np.diff(labels)) + 1
        return np.split(support, cuts) if support.size else []
    groups, i = [], 0
    while i < support.size:
        j = i
        while j < support.size and support[j] < support[i] + card:
            j += 1
        groups.append(support[i:j])
        i = j
    return groups


def fuse_peaks(d, grid: AngleGrid, subset_cardinality: int = 3, tau: float = 0.0,
               mode: str = "partition") -> FusedReport:
    """Merge neighbouring grid detections into single ``(angle, power)`` declarations.

    Entries below ``tau`` are zeroed. With ``mode="partition"`` the grid is cut
    into fixed consecutive blocks of ``subset_cardinality`` points (starting
    at index 0) and the nonzero entries of a block form one group. With
    ``mode="sliding"`` the lowest ungrouped nonzero index opens a window of
    ``subset_cardinality`` points instead. A group reports the summed power
    at its power-weighted centroid angle.
    """
    if subset_cardinality < 1 or subset_cardinality % 2 == 0:
        raise ValueError("subset_cardinality must be a positive odd integer")
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    if mode not in FUSION_MODES:
        raise ValueError(f"fusion mode must be one of {FUSION_MODES}")
    d = np.asarray(d, dtype=float)
    if d.shape != (len(grid),):
        raise ValueError("power vector does not match the grid")
    support = np.flatnonzero((d >= tau) & (d > 0))
    detections = []
    for idx in _groups(support, subset_cardinality, mode):
        power = float(np.sum(d[idx]))
        angles = grid.angles_deg[idx]
        angle = float(np.clip(np.sum(d[idx] * angles) / power, angles[0], angles[-1]))
        detections.append((angle, power))
    return FusedReport(tuple(detections), tuple(int(x) for x in support))


def hausdorff(x: Sequence[float], y: Sequence[float]) -> float:
    """Hausdorff distance between two nonempty angle sets (degrees)."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size == 0 or y.size == 0:
        raise ValueError("Hausdorff distance is undefined for an empty set")
    dist = np.abs(x[:, None] - y[None, :])
    return float(max(dist.min(axis=1).max(), dist.min(axis=0).max()))


def _angles(detections):
    if isinstance(detections, FusedReport):
        return detections.angles
    return np.asarray(detections, dtype=float).ravel()


def count_missed_ghosts(truth: Sequence[float], detections, match_tol_deg: float):
    """Greedy nearest matching within ``match_tol_deg``; returns ``(missed, ghosts)``.

    The closest remaining truth/detection pair is matched first (ties go to the
    lower truth index, then the lower detection index).
    """
    if match_tol_deg <= 0:
        raise ValueError("match tolerance must be positive")
    t = np.asarray(truth, dtype=float).ravel()
    a = _angles(detections)
    if t.size == 0 or a.size == 0:
        return int(t.size), int(a.size)
    dist = np.abs(t[:, None] - a[None, :])
    pairs = np.argwhere(dist <= match_tol_deg)
    order = np.lexsort((pairs[:, 1], pairs[:, 0], dist[pairs[:, 0], pairs[:, 1]]))
    used_t = np.zeros(t.size, dtype=bool)
    used_a = np.zeros(a.size, dtype=bool)
    matched = 0
    for i, j in pairs[order]:
        if not used_t[i] and not used_a[j]:
            used_t[i] = used_a[j] = True
            matched += 1
    return int(t.size - matched), int(a.size - matched)


def aoa_rms_accumulate(truth: Sequence[float], detections) -> np.ndarray:
    """Squared distance from every true angle to its closest detection."""
    a = _angles(detections)
    if a.size == 0:
        raise ValueError("no detections to compare against")
    t = np.asarray(truth, dtype=float).ravel()
    return np.min((t[:, None] - a[None, :]) ** 2, axis=1)


def trial_metrics(truth: Sequence[float], fused: FusedReport, grid: AngleGrid,
                  match_tol_deg: float = None) -> TrialMetrics:
    """All per-trial figures of merit; an empty declaration scores the grid span as Hausdorff."""
    if match_tol_deg is None:
        match_tol_deg = 1.5 * grid.spacing_deg
    truth = np.asarray(truth, dtype=float)
    missed, ghosts = count_missed_ghosts(truth, fused, match_tol_deg)
    if len(fused) == 0 or truth.size == 0:
        hd = 0.0 if len(fused) == truth.size else grid.span_deg
        errors = []
    else:
        hd = hausdorff(truth, fused.angles)
        errors = list(np.sqrt(aoa_rms_accumulate(truth, fused)))
    return TrialMetrics(hd, missed, ghosts, len(fused), errors)


def off_support_max(d, grid: AngleGrid, true_angles: Sequence[float], subset_cardinality: int = 3) -> float:
    """Largest power outside the fusion neighbourhoods of the true angles."""
    d = np.asarray(d, dtype=float)
    mask = np.ones(d.size, dtype=bool)
    half = subset_cardinality // 2
    for angle in true_angles:
        c = grid.nearest_index(angle)
        mask[max(0, c - half):c + half + 1] = False
    return float(np.max(d[mask])) if mask.any() else 0.0


def ghost_threshold_from_maxima(maxima, p_spurious: float) -> float:
    """Smallest ``tau`` with at most ``floor(p n)`` trials having off-support power ``>= tau``."""
    m = np.sort(np.asarray(maxima, dtype=float))[::-1]
    n = m.size
    if not (0.0 < p_spurious <= 0.1):
        raise ValueError("p_spurious must lie in (0, 0.1]")
    if n * p_spurious < 1:
        raise ValueError("need n_trials * p_spurious >= 1")
    allowed = int(math.floor(p_spurious * n + 1e-9))
    if allowed >= n:
        return 0.0
    level = m[allowed]
    return 0.0 if level <= 0 else float(np.nextafter(level, np.inf))


def calibrate_ghost_threshold(scenario: ScenarioConfig, p_spurious: float, n_trials: int, seed: int,
                              estimator: Callable, subset_cardinality: int = 3, map_fn: Callable = map) -> float:
    """Power threshold keeping the rate of trials with spurious detections at ``p_spurious``.

    ``estimator`` maps a :class:`SnapshotSet` to a power vector on the
    scenario grid. A scenario without jammers calibrates against noise-only data.
    """
    if n_trials * p_spurious < 1:
        raise ValueError("need n_trials * p_spurious >= 1")
    work = [(scenario, trial_seed(seed, t), estimator, subset_cardinality) for t in range(n_trials)]
    return ghost_threshold_from_maxima(list(map_fn(_ghost_trial, work)), p_spurious)


def _ghost_trial(args):
    scenario, seed, estimator, card = args
    z = draw_scenario(scenario, seed)
    return off_support_max(estimator(z), scenario.grid, scenario.angles_deg, card)
