"""Sparsity-promoting prior on the jammer power vector and the joint log-objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .array_model import Dictionary, interference_covariance


@dataclass(frozen=True)
class PriorParams:
    q: float
    k_snapshots: int
    noise_power: float

    def __post_init__(self):
        if not (0.0 < self.q <= 1.0):
            raise ValueError(f"q must lie in (0, 1], got {self.q}")
        if self.k_snapshots < 1:
            raise ValueError("k_snapshots must be positive")
        if self.noise_power < 1.0:
            raise ValueError("the prior requires noise power >= 1")


def chol_logdet(m: np.ndarray) -> float:
    """Log-determinant of a Hermitian positive definite matrix."""
    c = np.linalg.cholesky(m)
    return 2.0 * float(np.sum(np.log(np.real(np.diag(c)))))


def _penalty(d, q, k):
    return float(np.sum((k / q) * (np.power(d, q) - 1.0)))


def _check_d(d):
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("jammer powers must be nonnegative")
    return d


def log_prior(d, params: PriorParams, dictionary: Dictionary) -> float:
    """Unnormalised log prior ``(K-1) log det M - sum (K/q)(d^q - 1)``."""
    d = _check_d(d)
    M = interference_covariance(params.noise_power, d, dictionary)
    return (params.k_snapshots - 1) * chol_logdet(M) - _penalty(d, params.q, params.k_snapshots)


def limiting_log_prior(d, k_snapshots: int, noise_power: float, dictionary: Dictionary) -> float:
    """The ``q -> 0`` limit ``(K-1) log det M - K sum log d``; diagnostic only."""
    d = _check_d(d)
    M = interference_covariance(noise_power, d, dictionary)
    with np.errstate(divide="ignore"):
        return (k_snapshots - 1) * chol_logdet(M) - k_snapshots * float(np.sum(np.log(d)))


def log_joint_objective(d, s: np.ndarray, params: PriorParams, dictionary: Dictionary) -> float:
    """The objective ``g(d)`` maximised by the fixed-point iteration.

    It is the log-likelihood of the snapshots plus the log prior, which leaves a
    single ``-log det M`` term::

        g = -KN log(pi) - log det M - Tr(M^-1 S) - sum_l (K/q)(d_l^q - 1)
    """
    d = _check_d(d)
    if params.noise_power <= 0:
        raise ValueError("noise power must be positive")
    K, N = params.k_snapshots, dictionary.n_channels
    M = interference_covariance(params.noise_power, d, dictionary)
    c = np.linalg.cholesky(M)
    logdet = 2.0 * float(np.sum(np.log(np.real(np.diag(c)))))
    x = np.linalg.solve(c, s)
    trace = float(np.real(np.trace(np.linalg.solve(c.conj().T, x))))
    return -K * N * np.log(np.pi) - logdet - trace - _penalty(d, params.q, K)


def coordinate_quadratic(d, index: int, noise_power: float, dictionary: Dictionary) -> float:
    """``v_i^H (noise I + V D_i V^H)^-1 v_i`` with ``d_i`` removed from ``D``."""
    d_other = np.array(d, dtype=float)
    d_other[index] = 0.0
    M = interference_covariance(noise_power, d_other, dictionary)
    v = dictionary.matrix[:, index]
    return float(np.real(v.conj() @ np.linalg.solve(M, v)))


def log_coordinate_factor(d_i, a: float, params: PriorParams):
    """Log of the per-coordinate prior factor ``(1 + a d)^(K-1) / exp((K/q)(d^q - 1))``."""
    if a <= 0:
        raise ValueError("a must be positive")
    d_i = np.asarray(d_i, dtype=float)
    K, q = params.k_snapshots, params.q
    return (K - 1) * np.log1p(a * d_i) - (K / q) * (np.power(d_i, q) - 1.0)


def coordinate_factor(d_i, a: float, params: PriorParams):
    """Per-coordinate prior factor; may overflow to ``inf`` for small ``q``."""
    with np.errstate(over="ignore"):
        return np.exp(log_coordinate_factor(d_i, a, params))
