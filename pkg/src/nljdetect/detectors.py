"""Likelihood-ratio detectors (SC-LRT, SDC-LRT, SPICE-LRT) and threshold calibration."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .array_model import Dictionary, ScenarioConfig, SnapshotSet, draw_scenario
from .estimator import (
    EstimatorConfig,
    GridStats,
    SparseEstimate,
    estimate_joint,
    estimate_known_sigma,
    noise_mle_h0,
)


class DetectorKind(enum.Enum):
    SC_LRT = "sc_lrt"
    SDC_LRT = "sdc_lrt"
    SPICE_LRT = "spice_lrt"

    @classmethod
    def parse(cls, value) -> "DetectorKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower().replace("-", "_"))
        except ValueError:
            raise ValueError(f"unknown detector {value!r}") from None


@dataclass(frozen=True)
class DetectionReport:
    statistic: float
    threshold: float
    decision: bool
    estimate: SparseEstimate


@dataclass(frozen=True)
class SpiceConfig:
    max_iters: int = 200
    rel_tol: float = 1e-3


def log_pdf(s: np.ndarray, noise_power: float, d, dictionary: Dictionary, k: int) -> float:
    """Gaussian log-likelihood ``-KN log(pi) - K log det M - Tr(M^-1 S)`` of the snapshots."""
    if noise_power <= 0:
        raise ValueError("noise power must be positive")
    N = dictionary.n_channels
    d = np.asarray(d, dtype=float)
    if not np.any(d):
        return -k * N * np.log(np.pi) - k * N * np.log(noise_power) - float(np.real(np.trace(s))) / noise_power
    V = dictionary.matrix
    M = (V * d) @ V.conj().T
    M[np.diag_indices_from(M)] += noise_power
    c = np.linalg.cholesky(0.5 * (M + M.conj().T))
    logdet = 2.0 * float(np.sum(np.log(np.real(np.diag(c)))))
    x = np.linalg.solve(c, s)
    trace = float(np.real(np.trace(np.linalg.solve(c.conj().T, x))))
    return -k * N * np.log(np.pi) - k * logdet - trace


def _report(statistic, threshold, estimate):
    return DetectionReport(float(statistic), float(threshold), bool(statistic > threshold), estimate)


def sc_lrt_statistic(s: np.ndarray, k: int, noise_power_est: float, dictionary: Dictionary,
                     config: EstimatorConfig = EstimatorConfig(), stats: Optional[GridStats] = None):
    est = estimate_known_sigma(s, noise_power_est, dictionary, k, config, stats=stats)
    if not np.any(est.d > 0):
        return 0.0, est
    stat = log_pdf(s, noise_power_est, est.d, dictionary, k) - log_pdf(s, noise_power_est, 0.0, dictionary, k)
    return stat, est


def sdc_lrt_statistic(s: np.ndarray, k: int, dictionary: Dictionary,
                      config: EstimatorConfig = EstimatorConfig(), stats: Optional[GridStats] = None):
    est = estimate_joint(s, dictionary, k, config, stats=stats)
    sigma0 = noise_mle_h0(s, dictionary.n_channels, k)
    stat = log_pdf(s, est.noise_power, est.d, dictionary, k) - log_pdf(s, sigma0, 0.0, dictionary, k)
    return stat, est


def sc_lrt(z: SnapshotSet, noise_power_est: float, dictionary: Dictionary,
           config: EstimatorConfig = EstimatorConfig(), threshold: float = math.inf) -> DetectionReport:
    """Sparse cyclic LRT with an externally supplied noise power.

    ``threshold`` is on the log-likelihood-ratio scale; the default ``inf``
    only reports the statistic.
    """
    if noise_power_est < 1:
        raise ValueError("noise power estimate must be >= 1")
    stat, est = sc_lrt_statistic(z.sample_cov, z.n_snapshots, noise_power_est, dictionary, config)
    return _report(stat, threshold, est)


def sdc_lrt(z: SnapshotSet, dictionary: Dictionary, config: EstimatorConfig = EstimatorConfig(),
            threshold: float = math.inf) -> DetectionReport:
    """Sparse doubly cyclic LRT: joint ``(d, noise)`` estimate against the noise-only MLE."""
    stat, est = sdc_lrt_statistic(z.sample_cov, z.n_snapshots, dictionary, config)
    return _report(stat, threshold, est)


def spice_estimate(s: np.ndarray, dictionary: Dictionary, k: int,
                   config: SpiceConfig = SpiceConfig(), criterion_trace: Optional[list] = None) -> SparseEstimate:
    """Multi-snapshot SPICE with a common noise power.

    Runs the multiplicative covariance-fitting updates on ``R_hat = S / K`` and
    then rescales ``(d, noise)`` by the factor that minimises the fitting
    criterion along the ray. ``criterion_trace`` (if given) receives
    ``Tr(R^-1 R_hat)`` before every update; it is nonincreasing.
    """
    N = dictionary.n_channels
    V = dictionary.matrix
    r_hat = np.asarray(s) / k
    try:
        r_hat_inv = np.linalg.inv(r_hat)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("SPICE needs a nonsingular sample covariance (K >= N)") from exc
    r_hat_inv = 0.5 * (r_hat_inv + r_hat_inv.conj().T)
    w = np.real(np.einsum("ij,ik,kj->j", V.conj(), r_hat_inv, V)) / N
    gamma = float(np.real(np.trace(r_hat_inv))) / N
    if np.any(w <= 0) or gamma <= 0:
        raise np.linalg.LinAlgError("sample covariance is not positive definite")
    sqrt_w, sqrt_gamma = np.sqrt(w), math.sqrt(gamma)

    p = np.real(np.einsum("ij,ik,kj->j", V.conj(), r_hat, V))
    sigma = float(np.min(p))
    # start on the constraint surface sum(w p) + gamma sigma = 1 that every update lands on
    lead = float(np.sum(w * p)) + gamma * sigma
    p, sigma = p / lead, sigma / lead
    iters = 0
    for _ in range(config.max_iters):
        iters += 1
        R = (V * p) @ V.conj().T
        R[np.diag_indices_from(R)] += sigma
        R_inv = np.linalg.inv(0.5 * (R + R.conj().T))
        if criterion_trace is not None:
            criterion_trace.append(float(np.real(np.sum(R_inv * r_hat.T))))
        Q = R_inv @ r_hat @ R_inv
        atom_norm = np.sqrt(np.maximum(np.real(np.einsum("ij,ik,kj->j", V.conj(), Q, V)), 0.0))
        noise_norm = math.sqrt(max(float(np.real(np.trace(Q))), 0.0))
        rho = float(np.sum(sqrt_w * p * atom_norm)) + sqrt_gamma * sigma * noise_norm
        p_new = p * atom_norm / (sqrt_w * rho)
        sigma_new = sigma * noise_norm / (sqrt_gamma * rho)
        old = np.append(p, sigma)
        change = np.linalg.norm(np.append(p_new, sigma_new) - old) / np.linalg.norm(old)
        p, sigma = p_new, sigma_new
        if change < config.rel_tol:
            break
    R = (V * p) @ V.conj().T
    R[np.diag_indices_from(R)] += sigma
    R_inv = np.linalg.inv(0.5 * (R + R.conj().T))
    fit = float(np.real(np.sum(R_inv * r_hat.T)))
    reverse = float(np.real(np.sum(r_hat_inv * R.T)))
    scale = math.sqrt(fit / reverse)
    return SparseEstimate(scale * p, scale * sigma, float("nan"), int(np.count_nonzero(p > 0)), [], iters)


def spice_lrt_statistic(s: np.ndarray, k: int, dictionary: Dictionary, config: SpiceConfig = SpiceConfig()):
    est = spice_estimate(s, dictionary, k, config)
    sigma0 = noise_mle_h0(s, dictionary.n_channels, k)
    stat = log_pdf(s, est.noise_power, est.d, dictionary, k) - log_pdf(s, sigma0, 0.0, dictionary, k)
    return stat, est


def spice_lrt(z: SnapshotSet, dictionary: Dictionary, config: SpiceConfig = SpiceConfig(),
              threshold: float = math.inf) -> DetectionReport:
    """LRT with SPICE-estimated ``(d, noise)`` against the noise-only MLE."""
    stat, est = spice_lrt_statistic(z.sample_cov, z.n_snapshots, dictionary, config)
    return _report(stat, threshold, est)


def detector_statistic(kind: DetectorKind, z: SnapshotSet, dictionary: Dictionary, noise_power: float,
                       config: EstimatorConfig = EstimatorConfig(), spice_config: SpiceConfig = SpiceConfig()):
    """``(statistic, estimate)`` for any detector; ``noise_power`` is only used by SC-LRT."""
    kind = DetectorKind.parse(kind)
    s, k = z.sample_cov, z.n_snapshots
    if kind is DetectorKind.SC_LRT:
        return sc_lrt_statistic(s, k, noise_power, dictionary, config)
    if kind is DetectorKind.SDC_LRT:
        return sdc_lrt_statistic(s, k, dictionary, config)
    return spice_lrt_statistic(s, k, dictionary, spice_config)


def threshold_from_statistics(statistics, p_fjd: float) -> float:
    """The ``ceil((1 - p) n)``-th order statistic (1-based) of the sample."""
    stats = np.sort(np.asarray(statistics, dtype=float))
    n = stats.size
    if not (0.0 < p_fjd < 0.5):
        raise ValueError("p_fjd must lie in (0, 0.5)")
    if n * p_fjd < 1:
        raise ValueError("need n_trials * p_fjd >= 1")
    rank = math.ceil(round((1.0 - p_fjd) * n, 9))
    return float(stats[rank - 1])


def _h0_statistic(args):
    kind, config, seed, est_config, spice_config = args
    z = draw_scenario(config, seed)
    stat, _ = detector_statistic(kind, z, config.dictionary(), config.noise_power, est_config, spice_config)
    return stat


def trial_seed(master_seed: int, *key: int) -> np.random.SeedSequence:
    """Counter-based per-trial seed: independent of execution order."""
    return np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(x) for x in key))


def calibrate_threshold(kind: DetectorKind, h0_config: ScenarioConfig, p_fjd: float, n_trials: int, seed: int,
                        config: EstimatorConfig = EstimatorConfig(), spice_config: SpiceConfig = SpiceConfig(),
                        map_fn: Callable = map) -> float:
    """Monte Carlo threshold for a target false-jammer-detection probability.

    Jammers in ``h0_config`` are ignored. ``map_fn`` may be a parallel map; the
    result does not depend on it because every trial has its own seed.
    """
    if n_trials * p_fjd < 1:
        raise ValueError("need n_trials * p_fjd >= 1")
    kind = DetectorKind.parse(kind)
    h0 = h0_config.without_jammers()
    work = [(kind, h0, trial_seed(seed, t), config, spice_config) for t in range(n_trials)]
    return threshold_from_statistics(list(map_fn(_h0_statistic, work)), p_fjd)
