"""Uniform linear array model: steering vectors, dictionaries and snapshot synthesis."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

DEFAULT_SPACING_RATIO = 0.5


def _to_rad(theta_deg):
    # single degrees -> radians conversion point for the whole package
    return np.deg2rad(theta_deg)


def db_to_linear(x_db):
    return 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)


@dataclass(frozen=True, eq=False)
class AngleGrid:
    """Uniformly sampled angular sector (degrees)."""

    angles_deg: np.ndarray
    spacing_deg: float

    def __post_init__(self):
        angles = np.asarray(self.angles_deg, dtype=float)
        if angles.ndim != 1 or angles.size < 2:
            raise ValueError("an angle grid needs at least two angles")
        if self.spacing_deg <= 0:
            raise ValueError("grid spacing must be positive")
        steps = np.diff(angles)
        if np.any(steps <= 0):
            raise ValueError("grid angles must be strictly increasing")
        if np.max(np.abs(steps - self.spacing_deg)) > 1e-12 * max(1.0, np.max(np.abs(angles))):
            raise ValueError("grid angles are not uniformly spaced at spacing_deg")
        angles.setflags(write=False)
        object.__setattr__(self, "angles_deg", angles)

    @classmethod
    def from_range(cls, start_deg: float, stop_deg: float, spacing_deg: float) -> "AngleGrid":
        """Grid ``start, start + spacing, ...`` not exceeding ``stop``."""
        n = int(np.floor((stop_deg - start_deg) / spacing_deg + 1e-9)) + 1
        return cls(start_deg + spacing_deg * np.arange(n), float(spacing_deg))

    def __len__(self) -> int:
        return self.angles_deg.size

    def __eq__(self, other):
        if not isinstance(other, AngleGrid):
            return NotImplemented
        return self.spacing_deg == other.spacing_deg and np.array_equal(self.angles_deg, other.angles_deg)

    def __hash__(self):
        return hash((self.spacing_deg, self.angles_deg.tobytes()))

    @property
    def span_deg(self) -> float:
        return float(self.angles_deg[-1] - self.angles_deg[0])

    def index_of(self, angle_deg: float, tol: float = 1e-9) -> int:
        """Index of the grid point equal to ``angle_deg``; raises if off-grid."""
        idx = int(np.argmin(np.abs(self.angles_deg - angle_deg)))
        if abs(self.angles_deg[idx] - angle_deg) > tol:
            raise ValueError(f"angle {angle_deg} is not on the grid")
        return idx

    def nearest_index(self, angle_deg: float) -> int:
        return int(np.argmin(np.abs(self.angles_deg - angle_deg)))


@dataclass(frozen=True, eq=False)
class Dictionary:
    """Steering matrix over an angular grid, columns of unit norm."""

    matrix: np.ndarray
    grid: AngleGrid
    n_channels: int
    spacing_ratio: float = DEFAULT_SPACING_RATIO
    gram: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.matrix.setflags(write=False)
        gram = self.matrix.conj().T @ self.matrix
        gram.setflags(write=False)
        object.__setattr__(self, "gram", gram)

    @property
    def n_atoms(self) -> int:
        return self.matrix.shape[1]


def steering_vector(theta_deg: float, n: int, spacing_ratio: float = DEFAULT_SPACING_RATIO) -> np.ndarray:
    """ULA steering vector ``exp(j 2 pi (d/lambda) m sin theta) / sqrt(n)``.

    Args:
        theta_deg: Angle from broadside, degrees. Must satisfy ``|theta| < 90``.
        n: Number of channels (>= 2).
        spacing_ratio: Inter-element spacing over wavelength.

    Returns:
        Complex vector of length ``n`` with unit Euclidean norm.
    """
    return _steering_matrix(np.atleast_1d(theta_deg), n, spacing_ratio)[:, 0]


def _steering_matrix(angles_deg, n, spacing_ratio):
    if n < 2:
        raise ValueError("at least two channels are required")
    angles_deg = np.asarray(angles_deg, dtype=float)
    if np.any(np.abs(angles_deg) >= 90.0):
        raise ValueError("steering angles must lie strictly inside (-90, 90) degrees")
    phase = 2.0 * np.pi * spacing_ratio * np.outer(np.arange(n), np.sin(_to_rad(angles_deg)))
    return np.exp(1j * phase) / np.sqrt(n)


def build_dictionary(grid: AngleGrid, n: int, spacing_ratio: float = DEFAULT_SPACING_RATIO) -> Dictionary:
    """Stack steering vectors for every grid angle into an ``n x L`` matrix."""
    return Dictionary(_steering_matrix(grid.angles_deg, n, spacing_ratio), grid, n, spacing_ratio)


def interference_covariance(noise_power: float, d, dictionary: Dictionary) -> np.ndarray:
    """``noise_power * I + V diag(d) V^H``."""
    d = np.asarray(d, dtype=float)
    if noise_power <= 0:
        raise ValueError("noise power must be positive")
    if d.shape != (dictionary.n_atoms,):
        raise ValueError(f"power vector must have length {dictionary.n_atoms}")
    if np.any(d < 0):
        raise ValueError("jammer powers must be nonnegative")
    V = dictionary.matrix
    cov = (V * d) @ V.conj().T
    cov[np.diag_indices_from(cov)] += noise_power
    return 0.5 * (cov + cov.conj().T)


def point_covariance(noise_power: float, angles_deg: Sequence[float], powers: Sequence[float],
                     n: int, spacing_ratio: float = DEFAULT_SPACING_RATIO) -> np.ndarray:
    """Covariance for jammers at arbitrary (possibly off-grid) angles."""
    powers = np.asarray(powers, dtype=float)
    if np.any(powers < 0):
        raise ValueError("jammer powers must be nonnegative")
    cov = noise_power * np.eye(n, dtype=complex)
    if powers.size:
        A = _steering_matrix(angles_deg, n, spacing_ratio)
        cov += (A * powers) @ A.conj().T
    return 0.5 * (cov + cov.conj().T)


@dataclass(frozen=True, eq=False)
class SnapshotSet:
    """Data matrix ``Z`` (N x K) and its unnormalised sample covariance ``S = Z Z^H``."""

    data: np.ndarray
    sample_cov: np.ndarray = field(init=False)

    def __post_init__(self):
        Z = self.data
        S = Z @ Z.conj().T
        S = 0.5 * (S + S.conj().T)
        Z.setflags(write=False)
        S.setflags(write=False)
        object.__setattr__(self, "sample_cov", S)

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_snapshots(self) -> int:
        return self.data.shape[1]


def _cholesky(cov):
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError("covariance matrix is not positive definite") from exc


def _standard_normals(rng, n, k):
    w = rng.standard_normal((2, n, k))
    return (w[0] + 1j * w[1]) / np.sqrt(2.0)


def draw_snapshots(cov: np.ndarray, k: int, seed) -> SnapshotSet:
    """Draw ``k`` i.i.d. circular complex Gaussian snapshots with covariance ``cov``.

    ``seed`` is anything accepted by :func:`numpy.random.default_rng`.
    """
    if k < 1:
        raise ValueError("at least one snapshot is required")
    C = _cholesky(np.asarray(cov))
    rng = np.random.default_rng(seed)
    return SnapshotSet(C @ _standard_normals(rng, C.shape[0], k))


@dataclass(frozen=True)
class ScenarioConfig:
    """Simulation scenario.

    ``offgrid_width_deg`` is ``None`` for on-grid jammers, otherwise each trial
    draws every jammer angle uniformly in a window of that width centred on
    its nominal angle. ``power_ramp`` is ``(start_offset_db, step_db)``.
    """

    grid: AngleGrid
    jammers: tuple = ()
    n_channels: int = 32
    n_snapshots: int = 64
    noise_power: float = 2.0
    offgrid_width_deg: Optional[float] = None
    power_ramp: Optional[tuple] = None
    spacing_ratio: float = DEFAULT_SPACING_RATIO

    def __post_init__(self):
        jammers = tuple((float(a), float(j)) for a, j in self.jammers)
        object.__setattr__(self, "jammers", jammers)
        if self.noise_power < 1:
            raise ValueError("noise power must be >= 1")
        if self.n_channels < 2:
            raise ValueError("at least two channels are required")
        if self.n_snapshots < max(1, len(jammers)):
            raise ValueError("need at least as many snapshots as jammers")
        if self.offgrid_width_deg is None:
            for angle, _ in jammers:
                self.grid.index_of(angle)
        elif self.offgrid_width_deg <= 0:
            raise ValueError("off-grid window width must be positive")
        if self.power_ramp is not None:
            object.__setattr__(self, "power_ramp", tuple(float(x) for x in self.power_ramp))

    @property
    def angles_deg(self) -> np.ndarray:
        return np.array([a for a, _ in self.jammers], dtype=float)

    @property
    def powers(self) -> np.ndarray:
        """Linear jammer powers ``JNR * noise_power``."""
        return self.noise_power * db_to_linear([j for _, j in self.jammers])

    def with_jnr(self, jnr_db: float) -> "ScenarioConfig":
        return _replace(self, jammers=tuple((a, jnr_db) for a, _ in self.jammers))

    def without_jammers(self) -> "ScenarioConfig":
        return _replace(self, jammers=(), offgrid_width_deg=None, power_ramp=None)

    def dictionary(self) -> Dictionary:
        return build_dictionary(self.grid, self.n_channels, self.spacing_ratio)

    def covariance(self, angles_deg=None, jnr_offset_db: float = 0.0) -> np.ndarray:
        angles = self.angles_deg if angles_deg is None else np.asarray(angles_deg, dtype=float)
        powers = self.powers * db_to_linear(jnr_offset_db)
        return point_covariance(self.noise_power, angles, powers, self.n_channels, self.spacing_ratio)


def _replace(obj, **changes):
    from dataclasses import replace

    return replace(obj, **changes)


def draw_ramped_snapshots(config: ScenarioConfig, seed, angles_deg=None) -> SnapshotSet:
    """Snapshots whose jammer power ramps up to its nominal value.

    Column ``i`` (0-based) uses per-jammer JNR
    ``min(nominal, nominal + start_offset + i * step)``.
    """
    if config.power_ramp is None:
        raise ValueError("scenario has no power ramp")
    start, step = config.power_ramp
    k = config.n_snapshots
    rng = np.random.default_rng(seed)
    W = _standard_normals(rng, config.n_channels, k)
    offsets = np.minimum(0.0, start + step * np.arange(k))
    Z = np.empty_like(W)
    for off in np.unique(offsets):
        cols = offsets == off
        C = _cholesky(config.covariance(angles_deg, jnr_offset_db=off))
        Z[:, cols] = C @ W[:, cols]
    return SnapshotSet(Z)


def draw_scenario(config: ScenarioConfig, seed, angles_deg=None) -> SnapshotSet:
    """Draw one trial of ``config`` (ramped if it carries a power ramp)."""
    if config.power_ramp is not None and config.jammers:
        return draw_ramped_snapshots(config, seed, angles_deg)
    return draw_snapshots(config.covariance(angles_deg), config.n_snapshots, seed)
