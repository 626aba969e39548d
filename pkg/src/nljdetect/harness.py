"""Monte Carlo experiment orchestration, presets and result emission.

Every trial draws its data from a counter-based seed
``(master, purpose, spacing, jnr, trial)``, so results do not depend on the
number of worker processes or on which other experiments are run. All
detectors see the same data in a given trial.
"""

from __future__ import annotations

import copy
import csv
import functools
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import yaml

from .array_model import (
    DEFAULT_SPACING_RATIO,
    AngleGrid,
    ScenarioConfig,
    build_dictionary,
    draw_scenario,
    draw_snapshots,
    point_covariance,
)
from .detectors import (
    DetectorKind,
    SpiceConfig,
    log_pdf,
    sc_lrt_statistic,
    spice_estimate,
    threshold_from_statistics,
    trial_seed,
)
from .estimator import EstimatorConfig, GridStats, estimate_joint, noise_mle_h0
from .postprocess import (
    FUSION_MODES,
    fuse_peaks,
    ghost_threshold_from_maxima,
    off_support_max,
    trial_metrics,
)

WORKERS_ENV = "NLJ_DETECT_WORKERS"
CSV_HEADER = ("detector", "jnr_db", "grid_spacing_deg", "metric", "value", "n_trials")
EXPERIMENT_KINDS = ("detection", "estimation", "classification", "offgrid", "single_snapshot")
ESTIMATORS = ("proposed", "spice")

PURPOSE_H0, PURPOSE_H1, PURPOSE_GHOST, PURPOSE_DEMO = range(4)


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class NumericFailure(RuntimeError):
    """A Monte Carlo trial failed numerically."""


# ---------------------------------------------------------------- results


@dataclass(frozen=True)
class ResultRow:
    detector: str
    jnr_db: Optional[float]
    grid_spacing_deg: float
    metric: str
    value: float
    n_trials: int

    @property
    def key(self):
        return (self.detector, self.jnr_db, self.grid_spacing_deg, self.metric)


def _sort_key(key):
    detector, jnr, spacing, metric = key
    return (detector, spacing, -math.inf if jnr is None else jnr, metric)


class ResultTable:
    """Rows keyed by ``(detector, jnr_db, grid_spacing_deg, metric)``; each key appears once."""

    def __init__(self, rows=()):
        self._rows = {}
        for row in rows:
            self.add(row)

    def add(self, row: ResultRow) -> None:
        if row.key in self._rows:
            raise KeyError(f"duplicate result key {row.key}")
        self._rows[row.key] = row

    def put(self, detector, jnr_db, spacing, metric, value, n_trials) -> None:
        jnr = None if jnr_db is None else float(jnr_db)
        self.add(ResultRow(str(detector), jnr, float(spacing), str(metric), float(value), int(n_trials)))

    def extend(self, other: "ResultTable") -> None:
        for row in other.rows:
            self.add(row)

    @property
    def rows(self) -> list:
        return [self._rows[k] for k in sorted(self._rows, key=_sort_key)]

    def get(self, detector, jnr_db, spacing, metric) -> ResultRow:
        jnr = None if jnr_db is None else float(jnr_db)
        return self._rows[(detector, jnr, float(spacing), metric)]

    def value(self, detector, jnr_db, spacing, metric) -> float:
        return self.get(detector, jnr_db, spacing, metric).value

    def __len__(self):
        return len(self._rows)

    def __eq__(self, other):
        return isinstance(other, ResultTable) and self.rows == other.rows


def _fmt(x):
    return "" if x is None else repr(float(x))


def table_to_csv(table: ResultTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in table.rows:
        writer.writerow([r.detector, _fmt(r.jnr_db), _fmt(r.grid_spacing_deg), r.metric, _fmt(r.value), r.n_trials])
    return buf.getvalue()


def table_to_json(table: ResultTable) -> str:
    rows = [dict(zip(CSV_HEADER, (r.detector, r.jnr_db, r.grid_spacing_deg, r.metric, r.value, r.n_trials)))
            for r in table.rows]
    return json.dumps({"columns": list(CSV_HEADER), "rows": rows}, indent=1, allow_nan=True) + "\n"


def emit_results(table: ResultTable, path, fmt: str = "csv") -> None:
    """Write ``table`` to ``path`` (``"-"`` for stdout) as CSV or JSON."""
    if fmt not in ("csv", "json"):
        raise ConfigError(f"unknown output format {fmt!r}")
    text = table_to_csv(table) if fmt == "csv" else table_to_json(table)
    if path in (None, "-"):
        import sys

        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _parse_opt(x):
    return None if x in ("", None) else float(x)


def read_results(path, fmt: Optional[str] = None) -> ResultTable:
    """Read back a table written by :func:`emit_results`."""
    fmt = fmt or ("json" if str(path).endswith(".json") else "csv")
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    table = ResultTable()
    if fmt == "json":
        for r in json.loads(text)["rows"]:
            table.put(r["detector"], r["jnr_db"], r["grid_spacing_deg"], r["metric"], r["value"], r["n_trials"])
        return table
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != CSV_HEADER:
        raise ValueError("unexpected CSV header")
    for det, jnr, sp, metric, value, n in reader:
        table.put(det, _parse_opt(jnr), float(sp), metric, float(value), int(n))
    return table


# ---------------------------------------------------------------- spec


@dataclass(frozen=True)
class ExperimentSpec:
    """One experiment over a set of grid spacings and JNR values.

    ``offgrid_window`` is ``None`` (on-grid), a width in degrees, or the
    string ``"spacing"`` for a window as wide as the grid step.
    """

    name: str
    kind: str
    jammer_angles_deg: tuple
    jnr_sweep_db: tuple
    spacings_deg: tuple = (1.0, 2.0, 3.0)
    detectors: tuple = tuple(DetectorKind)
    grid_start_deg: float = -22.0
    grid_stop_deg: float = 22.0
    n_channels: int = 32
    n_snapshots: int = 64
    noise_power: float = 2.0
    power_ramp: Optional[tuple] = None
    offgrid_window: Optional[object] = None
    n_trials_threshold: int = 10_000
    n_trials_metrics: int = 1000
    n_trials_ghost: int = 10_000
    p_fjd: float = 1e-2
    p_spurious: float = 1e-3
    ghost_jnr_db: float = 10.0
    subset_cardinality: int = 3
    fusion_mode: str = "partition"
    estimator: EstimatorConfig = EstimatorConfig()
    demo_cases: tuple = ()
    seed: int = 0
    output_path: Optional[str] = None
    min_trials: int = field(default=100, repr=False)

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ConfigError(f"experiment kind must be one of {EXPERIMENT_KINDS}")
        if not self.jnr_sweep_db:
            raise ConfigError("jnr_sweep_db must not be empty")
        if not self.spacings_deg or any(s <= 0 for s in self.spacings_deg):
            raise ConfigError("spacings_deg must be a nonempty list of positive values")
        for n in (self.n_trials_threshold, self.n_trials_metrics, self.n_trials_ghost):
            if n < self.min_trials:
                raise ConfigError(f"trial counts must be >= {self.min_trials}")
        if self.n_trials_threshold * self.p_fjd < 1 or not (0 < self.p_fjd < 0.5):
            raise ConfigError("need 0 < p_fjd < 0.5 and n_trials_threshold * p_fjd >= 1")
        if self.n_trials_ghost * self.p_spurious < 1 or not (0 < self.p_spurious <= 0.1):
            raise ConfigError("need 0 < p_spurious <= 0.1 and n_trials_ghost * p_spurious >= 1")
        if self.fusion_mode not in FUSION_MODES:
            raise ConfigError(f"fusion mode must be one of {FUSION_MODES}")
        if self.subset_cardinality < 1 or self.subset_cardinality % 2 == 0:
            raise ConfigError("subset_cardinality must be a positive odd integer")
        if self.kind == "offgrid" and self.offgrid_window is None:
            raise ConfigError("an off-grid study needs an offgrid window")
        if isinstance(self.offgrid_window, str) and self.offgrid_window != "spacing":
            raise ConfigError("offgrid window must be a width in degrees or 'spacing'")
        if self.kind == "single_snapshot" and not self.demo_cases:
            raise ConfigError("single-snapshot demo needs demo_cases")
        object.__setattr__(self, "detectors", tuple(DetectorKind.parse(d) for d in self.detectors))
        for s in self.spacings_deg:
            grid = self.grid(s)
            if self.offgrid_window is None:
                for a in self.jammer_angles_deg:
                    try:
                        grid.index_of(a)
                    except ValueError:
                        raise ConfigError(f"jammer angle {a} is not on the {s} degree grid") from None

    def grid(self, spacing: float) -> AngleGrid:
        return AngleGrid.from_range(self.grid_start_deg, self.grid_stop_deg, spacing)

    def window_width(self, spacing: float) -> Optional[float]:
        if self.offgrid_window is None:
            return None
        return float(spacing) if self.offgrid_window == "spacing" else float(self.offgrid_window)

    def scenario(self, spacing: float, jnr_db: float, offgrid: bool = True, ramp: bool = True) -> ScenarioConfig:
        return ScenarioConfig(
            grid=self.grid(spacing),
            jammers=tuple((a, jnr_db) for a in self.jammer_angles_deg),
            n_channels=self.n_channels,
            n_snapshots=self.n_snapshots,
            noise_power=self.noise_power,
            offgrid_width_deg=self.window_width(spacing) if offgrid else None,
            power_ramp=self.power_ramp if ramp else None,
        )

    def scaled(self, factor: float) -> "ExperimentSpec":
        """Trial counts multiplied by ``factor`` (rounded, kept feasible); for desk or smoke runs."""
        if factor <= 0:
            raise ConfigError("trials scale must be positive")
        if factor == 1:
            return self

        def sc(n, p):
            return max(int(round(n * factor)), math.ceil(1.0 / p - 1e-9), 1)

        return replace(self, n_trials_threshold=sc(self.n_trials_threshold, self.p_fjd),
                       n_trials_metrics=max(int(round(self.n_trials_metrics * factor)), 1),
                       n_trials_ghost=sc(self.n_trials_ghost, self.p_spurious), min_trials=1)


# ---------------------------------------------------------------- trials


@functools.lru_cache(maxsize=32)
def _dictionary(grid: AngleGrid, n: int, ratio: float):
    return build_dictionary(grid, n, ratio)


@dataclass(frozen=True)
class _Trial:
    scenario: ScenarioConfig
    seed: np.random.SeedSequence
    detectors: tuple
    estimators: tuple
    est_config: EstimatorConfig


def _jitter_angles(scenario: ScenarioConfig, rng) -> np.ndarray:
    half = 0.5 * scenario.offgrid_width_deg
    nominal = scenario.angles_deg
    return nominal + rng.uniform(-half, half, size=nominal.size)


def _run_trial(t: _Trial) -> dict:
    sc = t.scenario
    angles = None
    data_seed = t.seed
    if sc.offgrid_width_deg is not None and sc.jammers:
        angle_seed, data_seed = t.seed.spawn(2)
        angles = _jitter_angles(sc, np.random.default_rng(angle_seed))
    z = draw_scenario(sc, data_seed, angles)
    D = _dictionary(sc.grid, sc.n_channels, sc.spacing_ratio)
    s, k = z.sample_cov, z.n_snapshots
    stats = GridStats(s, D, k)
    out = {"stat": {}, "d": {}, "angles": sc.angles_deg if angles is None else angles}
    kinds = set(t.detectors)
    sigma0 = noise_mle_h0(s, sc.n_channels, k)
    with np.errstate(all="raise", under="ignore"):
        log_h0 = log_pdf(s, sigma0, 0.0, D, k)
        if DetectorKind.SC_LRT in kinds:
            out["stat"][DetectorKind.SC_LRT] = sc_lrt_statistic(s, k, sc.noise_power, D, t.est_config, stats)[0]
        if DetectorKind.SDC_LRT in kinds or "proposed" in t.estimators:
            est = estimate_joint(s, D, k, t.est_config, stats=stats)
            out["d"]["proposed"] = est.d
            out["stat"][DetectorKind.SDC_LRT] = log_pdf(s, est.noise_power, est.d, D, k) - log_h0
        if DetectorKind.SPICE_LRT in kinds or "spice" in t.estimators:
            est = spice_estimate(s, D, k, SpiceConfig())
            out["d"]["spice"] = est.d
            out["stat"][DetectorKind.SPICE_LRT] = log_pdf(s, est.noise_power, est.d, D, k) - log_h0
    return out


def _guarded(t: _Trial) -> dict:
    try:
        return _run_trial(t)
    except (np.linalg.LinAlgError, FloatingPointError, ValueError, ZeroDivisionError) as exc:
        raise NumericFailure(f"trial with seed key {t.seed.spawn_key} failed: {exc!r}") from exc


def n_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


def run_trials(trials: list, workers: Optional[int] = None) -> list:
    """Results of ``trials`` in input order, serially or in a process pool."""
    workers = n_workers() if workers is None else max(1, int(workers))
    if workers == 1 or len(trials) < 2:
        return [_guarded(t) for t in trials]
    chunk = max(1, len(trials) // (8 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_guarded, trials, chunksize=chunk))


def _spacing_key(spacing: float) -> int:
    return int(round(spacing * 1000))


def _jnr_key(jnr_db: float) -> int:
    return int(round(jnr_db * 1000)) + 1_000_000


def _trials(spec, scenario, purpose, spacing, jnr_db, n, detectors=(), estimators=()):
    jk = _jnr_key(jnr_db) if jnr_db is not None else 0
    return [_Trial(scenario, trial_seed(spec.seed, purpose, _spacing_key(spacing), jk, i),
                   tuple(detectors), tuple(estimators), spec.estimator) for i in range(n)]


# ---------------------------------------------------------------- calibration


def h0_statistics(spec: ExperimentSpec, spacing: float, workers=None) -> dict:
    """Detector statistics on ``n_trials_threshold`` noise-only trials, per detector."""
    h0 = spec.scenario(spacing, 0.0).without_jammers()
    res = run_trials(_trials(spec, h0, PURPOSE_H0, spacing, None, spec.n_trials_threshold, spec.detectors), workers)
    return {kind: np.array([r["stat"][kind] for r in res]) for kind in spec.detectors}


def detector_thresholds(spec: ExperimentSpec, spacing: float, workers=None, table: ResultTable = None) -> dict:
    """Per-detector LRT thresholds from noise-only trials."""
    stats = h0_statistics(spec, spacing, workers)
    etas = {}
    for kind in spec.detectors:
        etas[kind] = threshold_from_statistics(stats[kind], spec.p_fjd)
        if table is not None:
            table.put(kind.value, None, spacing, "threshold", etas[kind], spec.n_trials_threshold)
    return etas


def ghost_thresholds(spec: ExperimentSpec, spacing: float, workers=None, table: ResultTable = None) -> dict:
    """Per-estimator power thresholds from the nominal on-grid scenario at ``ghost_jnr_db``."""
    sc = spec.scenario(spacing, spec.ghost_jnr_db, offgrid=False, ramp=False)
    res = run_trials(_trials(spec, sc, PURPOSE_GHOST, spacing, spec.ghost_jnr_db, spec.n_trials_ghost,
                             estimators=ESTIMATORS), workers)
    taus = {}
    for name in ESTIMATORS:
        maxima = [off_support_max(r["d"][name], sc.grid, sc.angles_deg, spec.subset_cardinality) for r in res]
        taus[name] = ghost_threshold_from_maxima(maxima, spec.p_spurious)
        if table is not None:
            table.put(name, spec.ghost_jnr_db, spacing, "ghost_threshold", taus[name], spec.n_trials_ghost)
    return taus


# ---------------------------------------------------------------- experiments


def _h1(spec, spacing, jnr, detectors=(), estimators=(), workers=None):
    sc = spec.scenario(spacing, jnr)
    return sc, run_trials(_trials(spec, sc, PURPOSE_H1, spacing, jnr, spec.n_trials_metrics,
                                  detectors, estimators), workers)


def _put_pjd(table, spec, spacing, jnr, results, etas):
    n = len(results)
    for kind in spec.detectors:
        hits = sum(r["stat"][kind] > etas[kind] for r in results)
        table.put(kind.value, jnr, spacing, "pjd", hits / n, n)


def _fused(spec, grid, results, name, tau):
    return [fuse_peaks(r["d"][name], grid, spec.subset_cardinality, tau, spec.fusion_mode) for r in results]


def _put_histogram(table, spec, spacing, jnr, results, grid, taus):
    n = len(results)
    true_order = len(spec.jammer_angles_deg)
    for name in ESTIMATORS:
        orders = np.array([len(f) for f in _fused(spec, grid, results, name, taus[name])])
        for h in range(1, spec.estimator.nj_max + 1):
            table.put(name, jnr, spacing, f"order_{h}", int(np.sum(orders == h)), n)
        table.put(name, jnr, spacing, "order_correct_fraction", float(np.mean(orders == true_order)), n)


def _put_aoa(table, spec, spacing, jnr, results, grid, taus):
    for name in ESTIMATORS:
        sq, excluded = [], 0
        for r, f in zip(results, _fused(spec, grid, results, name, taus[name])):
            if len(f) == 0:
                excluded += 1
                continue
            sq.extend(np.square(trial_metrics(r["angles"], f, grid).aoa_errors_deg))
        used = len(results) - excluded
        rms = math.sqrt(float(np.mean(sq))) if sq else float("nan")
        table.put(name, jnr, spacing, "aoa_rms_deg", rms, used)
        table.put(name, jnr, spacing, "aoa_excluded_trials", excluded, len(results))


def run_detection_curve(spec: ExperimentSpec, workers=None, thresholds: Optional[dict] = None) -> ResultTable:
    """Thresholds on noise-only data, then detection probability for every spacing and JNR.

    ``thresholds`` optionally maps a spacing to an existing ``{detector: eta}``
    calibration; those spacings skip the noise-only trials and emit no
    threshold rows.
    """
    table = ResultTable()
    thresholds = thresholds or {}
    for spacing in spec.spacings_deg:
        if spacing in thresholds:
            etas = thresholds[spacing]
        else:
            etas = detector_thresholds(spec, spacing, workers, table)
        for jnr in spec.jnr_sweep_db:
            _, res = _h1(spec, spacing, jnr, spec.detectors, workers=workers)
            _put_pjd(table, spec, spacing, jnr, res, etas)
    return table


def run_estimation_metrics(spec: ExperimentSpec, workers=None) -> ResultTable:
    """RMS Hausdorff distance, missed and ghost counts for the joint estimator and SPICE."""
    table = ResultTable()
    for spacing in spec.spacings_deg:
        taus = ghost_thresholds(spec, spacing, workers, table)
        for jnr in spec.jnr_sweep_db:
            sc, res = _h1(spec, spacing, jnr, estimators=ESTIMATORS, workers=workers)
            n = len(res)
            for name in ESTIMATORS:
                ms = [trial_metrics(r["angles"], f, sc.grid)
                      for r, f in zip(res, _fused(spec, sc.grid, res, name, taus[name]))]
                for metric, attr in (("hausdorff_rms_deg", "hausdorff_deg"), ("missed_rms", "n_missed"),
                                     ("ghosts_rms", "n_ghosts")):
                    vals = np.array([getattr(m, attr) for m in ms], dtype=float)
                    table.put(name, jnr, spacing, metric, math.sqrt(float(np.mean(vals ** 2))), n)
    return table


def run_classification_histogram(spec: ExperimentSpec, workers=None) -> ResultTable:
    """Counts of declared jammer numbers ``1..nj_max`` after thresholding and fusion."""
    table = ResultTable()
    for spacing in spec.spacings_deg:
        taus = ghost_thresholds(spec, spacing, workers, table)
        for jnr in spec.jnr_sweep_db:
            sc, res = _h1(spec, spacing, jnr, estimators=ESTIMATORS, workers=workers)
            _put_histogram(table, spec, spacing, jnr, res, sc.grid, taus)
    return table


def run_offgrid_study(spec: ExperimentSpec, workers=None) -> ResultTable:
    """Detection, classification and AOA error with jammer angles jittered every trial."""
    if spec.offgrid_window is None:
        raise ConfigError("an off-grid study needs an offgrid window")
    table = ResultTable()
    for spacing in spec.spacings_deg:
        etas = detector_thresholds(spec, spacing, workers, table) if spec.detectors else {}
        taus = ghost_thresholds(spec, spacing, workers, table)
        for jnr in spec.jnr_sweep_db:
            sc, res = _h1(spec, spacing, jnr, spec.detectors, ESTIMATORS, workers)
            if spec.detectors:
                _put_pjd(table, spec, spacing, jnr, res, etas)
            _put_histogram(table, spec, spacing, jnr, res, sc.grid, taus)
            _put_aoa(table, spec, spacing, jnr, res, sc.grid, taus)
    return table


def run_single_snapshot_demo(spec: ExperimentSpec, workers=None) -> ResultTable:
    """Full estimated power profile of one trial per demo case (``label -> angles``)."""
    table = ResultTable()
    for spacing in spec.spacings_deg:
        grid = spec.grid(spacing)
        for ci, (label, angles) in enumerate(spec.demo_cases):
            for jnr in spec.jnr_sweep_db:
                powers = spec.noise_power * 10.0 ** (np.full(len(angles), jnr) / 10.0)
                cov = point_covariance(spec.noise_power, angles, powers, spec.n_channels)
                seed = trial_seed(spec.seed, PURPOSE_DEMO, _spacing_key(spacing), _jnr_key(jnr), ci)
                z = draw_snapshots(cov, spec.n_snapshots, seed)
                D = _dictionary(grid, spec.n_channels, DEFAULT_SPACING_RATIO)
                est = {"proposed": estimate_joint(z.sample_cov, D, z.n_snapshots, spec.estimator).d,
                       "spice": spice_estimate(z.sample_cov, D, z.n_snapshots).d}
                for name, d in est.items():
                    for a, p in zip(grid.angles_deg, d):
                        table.put(name, jnr, spacing, f"{label}:power_at_{a:g}", p, 1)
    return table


RUNNERS = {
    "detection": run_detection_curve,
    "estimation": run_estimation_metrics,
    "classification": run_classification_histogram,
    "offgrid": run_offgrid_study,
    "single_snapshot": run_single_snapshot_demo,
}


def run_experiment(spec: ExperimentSpec, workers=None) -> ResultTable:
    return RUNNERS[spec.kind](spec, workers)


def run_calibration(spec: ExperimentSpec, what: str = "both", workers=None) -> ResultTable:
    """Detector thresholds and/or ghost thresholds for every spacing of ``spec``."""
    if what not in ("threshold", "ghost", "both"):
        raise ConfigError("calibration target must be threshold, ghost or both")
    table = ResultTable()
    for spacing in spec.spacings_deg:
        if what in ("threshold", "both"):
            detector_thresholds(spec, spacing, workers, table)
        if what in ("ghost", "both"):
            ghost_thresholds(spec, spacing, workers, table)
    return table


# ---------------------------------------------------------------- configuration

THREE = [-10.0, -4.0, 8.0]
FOUR = [-10.0, -4.0, 8.0, 14.0]
DETECTION_SWEEP = [-10.0, -8.0, -6.0, -4.0, -2.0, 0.0, 2.0, 4.0]
METRIC_SWEEP = [-6.0, -4.0, -2.0, 0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0]

PRESETS = {
    "fig4": {"experiment": "detection", "jammers_deg": THREE, "jnr_sweep_db": DETECTION_SWEEP},
    "fig5": {"experiment": "estimation", "jammers_deg": THREE, "jnr_sweep_db": METRIC_SWEEP},
    "fig6": {"experiment": "classification", "jammers_deg": THREE, "jnr_sweep_db": [10.0]},
    "fig7": {"experiment": "detection", "jammers_deg": THREE, "jnr_sweep_db": DETECTION_SWEEP,
             "power_ramp": [-5.0, 1.0]},
    "fig8": {"experiment": "offgrid", "jammers_deg": THREE, "jnr_sweep_db": DETECTION_SWEEP,
             "offgrid_window": 2.0},
    "fig9": {"experiment": "offgrid", "jammers_deg": THREE, "jnr_sweep_db": [10.0], "offgrid_window": 2.0,
             "detectors": []},
    "fig10": {"experiment": "offgrid", "jammers_deg": THREE, "jnr_sweep_db": METRIC_SWEEP,
              "offgrid_window": 2.0, "detectors": []},
    "fig11": {"experiment": "offgrid", "jammers_deg": THREE, "jnr_sweep_db": DETECTION_SWEEP,
              "offgrid_window": "spacing"},
    "fig12": {"experiment": "offgrid", "jammers_deg": THREE, "jnr_sweep_db": [10.0],
              "offgrid_window": "spacing", "detectors": []},
    "fig13": {"experiment": "single_snapshot", "jammers_deg": THREE, "jnr_sweep_db": [30.0],
              "spacings_deg": [1.0],
              "demo_cases": {"ongrid": [-10.0, 6.0, 8.0], "offgrid": [-9.5, -3.5, 8.5]}},
    "fig14": {"experiment": "detection", "jammers_deg": FOUR, "jnr_sweep_db": DETECTION_SWEEP},
    "fig15": {"experiment": "estimation", "jammers_deg": FOUR, "jnr_sweep_db": METRIC_SWEEP},
    "fig16": {"experiment": "classification", "jammers_deg": FOUR, "jnr_sweep_db": [10.0]},
    "fig17": {"experiment": "offgrid", "jammers_deg": FOUR, "jnr_sweep_db": [10.0], "offgrid_window": 2.0,
              "detectors": [], "estimator": {"nj_max": 8}},
}
for _name in list(PRESETS):
    PRESETS[f"{_name}-desk"] = dict(PRESETS[_name], trials_scale=0.2)

_TOP_KEYS = {"name", "preset", "experiment", "seed", "jammers_deg", "jnr_sweep_db", "spacings_deg", "grid",
             "scenario", "detectors", "trials", "p_fjd", "p_spurious", "ghost_jnr_db", "fusion", "estimator",
             "power_ramp", "offgrid_window", "demo_cases", "trials_scale", "output_path"}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict) and key != "demo_cases":
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _section(cfg, key, allowed):
    sec = cfg.get(key) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"'{key}' must be a mapping")
    unknown = set(sec) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in '{key}': {sorted(unknown)}")
    return sec


def spec_from_dict(cfg: dict, name: str = "custom") -> ExperimentSpec:
    """Build an :class:`ExperimentSpec` from the configuration schema (see the README)."""
    if not isinstance(cfg, dict):
        raise ConfigError("configuration must be a mapping")
    if "preset" in cfg:
        base = cfg["preset"]
        if base not in PRESETS:
            raise ConfigError(f"unknown preset {base!r}")
        name = cfg.get("name", base)
        cfg = _merge(PRESETS[base], {k: v for k, v in cfg.items() if k != "preset"})
    unknown = set(cfg) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    grid = _section(cfg, "grid", {"start_deg", "stop_deg"})
    scen = _section(cfg, "scenario", {"n_channels", "n_snapshots", "noise_power"})
    trials = _section(cfg, "trials", {"threshold", "metrics", "ghost"})
    fusion = _section(cfg, "fusion", {"subset_cardinality", "mode"})
    est = _section(cfg, "estimator", set(EstimatorConfig.__dataclass_fields__))
    try:
        demo = cfg.get("demo_cases") or {}
        spec = ExperimentSpec(
            name=str(cfg.get("name", name)),
            kind=cfg.get("experiment", ""),
            jammer_angles_deg=tuple(float(a) for a in cfg.get("jammers_deg", THREE)),
            jnr_sweep_db=tuple(float(j) for j in cfg.get("jnr_sweep_db", ())),
            spacings_deg=tuple(float(s) for s in cfg.get("spacings_deg", (1.0, 2.0, 3.0))),
            detectors=tuple(cfg.get("detectors", [k.value for k in DetectorKind])),
            grid_start_deg=float(grid.get("start_deg", -22.0)),
            grid_stop_deg=float(grid.get("stop_deg", 22.0)),
            n_channels=int(scen.get("n_channels", 32)),
            n_snapshots=int(scen.get("n_snapshots", 64)),
            noise_power=float(scen.get("noise_power", 2.0)),
            power_ramp=tuple(cfg["power_ramp"]) if cfg.get("power_ramp") is not None else None,
            offgrid_window=cfg.get("offgrid_window"),
            n_trials_threshold=int(trials.get("threshold", 10_000)),
            n_trials_metrics=int(trials.get("metrics", 1000)),
            n_trials_ghost=int(trials.get("ghost", 10_000)),
            p_fjd=float(cfg.get("p_fjd", 1e-2)),
            p_spurious=float(cfg.get("p_spurious", 1e-3)),
            ghost_jnr_db=float(cfg.get("ghost_jnr_db", 10.0)),
            subset_cardinality=int(fusion.get("subset_cardinality", 3)),
            fusion_mode=str(fusion.get("mode", "partition")),
            estimator=EstimatorConfig(**est),
            demo_cases=tuple((str(k), tuple(float(a) for a in v)) for k, v in demo.items()),
            seed=int(cfg.get("seed", 0)),
            output_path=cfg.get("output_path"),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    scale = float(cfg.get("trials_scale", 1.0))
    return spec.scaled(scale)


def load_spec(source: str, seed: Optional[int] = None, trials_scale: Optional[float] = None) -> ExperimentSpec:
    """Resolve a preset name or a YAML/JSON config path into a spec."""
    if source in PRESETS:
        cfg = dict(PRESETS[source], name=source)
    elif os.path.exists(source):
        try:
            with open(source, encoding="utf-8") as fh:
                cfg = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {source}: {exc}") from exc
    else:
        raise ConfigError(f"{source!r} is neither a preset ({', '.join(sorted(PRESETS))}) nor a file")
    if seed is not None:
        cfg = dict(cfg, seed=seed)
    spec = spec_from_dict(cfg)
    if trials_scale is not None:
        spec = spec.scaled(trials_scale)
    return spec
