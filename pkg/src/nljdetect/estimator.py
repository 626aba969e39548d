"""Sparse cyclic estimation of jammer powers, with known or unknown noise power.

Most numerical work happens in the ``L x L`` grid space: with ``G = V^H V``
and ``T = V^H S V`` the Woodbury identity gives every quantity the estimator
needs (quadratic forms, log-determinants, traces) without forming ``N x N``
inverses, and it lets all ``q`` branches advance together.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .array_model import Dictionary, interference_covariance

DEFAULT_Q_GRID = tuple(round(0.1 * i, 1) for i in range(1, 11))


@dataclass(frozen=True)
class EstimatorConfig:
    q_grid: tuple = DEFAULT_Q_GRID
    nj_max: int = 6
    outer_max_iters: int = 50
    inner_max_iters: int = 30
    refine_max_iters: int = 20
    rel_tol_outer: float = 1e-2
    rel_tol_inner: float = 1e-3
    init_floor: float = 1e-6

    def __post_init__(self):
        q_grid = tuple(float(q) for q in self.q_grid)
        if not q_grid or any(not (0.0 < q <= 1.0) for q in q_grid):
            raise ValueError("q_grid must be a nonempty subset of (0, 1]")
        object.__setattr__(self, "q_grid", q_grid)
        if self.nj_max < 1:
            raise ValueError("nj_max must be >= 1")
        if min(self.outer_max_iters, self.inner_max_iters, self.refine_max_iters) < 1:
            raise ValueError("iteration caps must be >= 1")
        if min(self.rel_tol_outer, self.rel_tol_inner, self.init_floor) <= 0:
            raise ValueError("tolerances and init_floor must be positive")


@dataclass
class SparseEstimate:
    d: np.ndarray
    noise_power: float
    q_selected: float
    order: int
    objective_trace: list = field(default_factory=list)
    iters_used: int = 0
    bic: float = float("nan")
    branch_states: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.d > 0)


class GridStats:
    """Grid-space sufficient statistics of one sample covariance."""

    def __init__(self, s: np.ndarray, dictionary: Dictionary, k: int):
        V = dictionary.matrix
        T = V.conj().T @ s @ V
        self.G = dictionary.gram
        self.T = 0.5 * (T + T.conj().T)
        self.tr_s = float(np.real(np.trace(s)))
        self.n = dictionary.n_channels
        self.k = int(k)
        self.n_atoms = dictionary.n_atoms


def _hermitian_logdet(W):
    c = np.linalg.cholesky(W)
    return 2.0 * np.sum(np.log(np.real(np.diagonal(c, axis1=-2, axis2=-1))), axis=-1)


def _grid_quantities(D, noise_power, G, T):
    """Batched quadratic forms for rows of ``D`` (shape ``(P, L)``).

    Returns ``a = diag(V^H M^-1 V)``, ``b = diag(V^H M^-1 S M^-1 V)``,
    ``log det W`` and ``Tr(W^-1 D^1/2 T D^1/2)`` with
    ``W = noise I + D^1/2 G D^1/2``.
    """
    P, L = D.shape
    sq = np.sqrt(D)
    eye = np.eye(L)
    W = noise_power * eye + sq[:, :, None] * G * sq[:, None, :]
    X = np.linalg.solve(W, np.broadcast_to(eye, W.shape) * sq[:, None, :])
    C = sq[:, :, None] * X
    B = (eye - C @ G) / noise_power
    a = np.real(np.einsum("ik,pki->pi", G, B))
    b = np.real(np.einsum("pki,pki->pi", B.conj(), T @ B))
    logdet_w = _hermitian_logdet(W)
    tr_ct = np.real(np.einsum("pij,ji->p", C, T))
    return a, b, logdet_w, tr_ct


def _objective(D, qs, noise_power, stats, logdet_w, tr_ct):
    K, N, L = stats.k, stats.n, stats.n_atoms
    logdet_m = (N - L) * np.log(noise_power) + logdet_w
    trace = (stats.tr_s - tr_ct) / noise_power
    penalty = np.sum((K / qs[:, None]) * (np.power(D, qs[:, None]) - 1.0), axis=1)
    return -K * N * np.log(np.pi) - logdet_m - trace - penalty


def _fixed_point_batch(D, qs, noise_power, stats):
    """One fixed-point update for every row; also returns ``g`` at the input rows."""
    a, b, logdet_w, tr_ct = _grid_quantities(D, noise_power, stats.G, stats.T)
    g_in = _objective(D, qs, noise_power, stats, logdet_w, tr_ct)
    D_new = np.power(D, 2.0 - qs[:, None]) * np.maximum(b - a, 0.0) / stats.k
    return D_new, g_in


def _objective_batch(D, qs, noise_power, stats):
    _, _, logdet_w, tr_ct = _grid_quantities(D, noise_power, stats.G, stats.T)
    return _objective(D, qs, noise_power, stats, logdet_w, tr_ct)


def h_matrix(d, noise_power: float, s: np.ndarray, dictionary: Dictionary) -> np.ndarray:
    """``M^-1 S M^-1 - M^-1`` with ``M = noise I + V diag(d) V^H``."""
    M = interference_covariance(noise_power, d, dictionary)
    Minv = np.linalg.inv(M)
    Minv = 0.5 * (Minv + Minv.conj().T)
    H = Minv @ s @ Minv - Minv
    return 0.5 * (H + H.conj().T)


def fixed_point_step(d, noise_power: float, q: float, s: np.ndarray, dictionary: Dictionary, k: int) -> np.ndarray:
    """One sparse fixed-point update ``d_i <- d_i^(2-q)/K max(v_i^H H(d) v_i, 0)``."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("fixed-point input powers must be strictly positive (zero is absorbing)")
    if not (0.0 < q <= 1.0):
        raise ValueError("q must lie in (0, 1]")
    stats = GridStats(s, dictionary, k)
    D_new, _ = _fixed_point_batch(d[None, :], np.array([float(q)]), float(noise_power), stats)
    return D_new[0]


def _refine_batch(d0, support, valid, noise_power, stats, max_sweeps, rel_tol, history=None):
    """Cyclic coordinate ascent of the likelihood on padded supports.

    ``d0``, ``support`` and ``valid`` are ``(P, H)``; supports are sorted by
    ascending grid index within the valid slots. Coordinates that are zero at
    the start of a sweep do not take part in it.
    """
    P, H = d0.shape
    K = stats.k
    Gs = stats.G[support[:, :, None], support[:, None, :]]
    Ts = stats.T[support[:, :, None], support[:, None, :]]
    d = np.where(valid, d0, 0.0)
    done = np.zeros(P, dtype=bool)
    eye = np.eye(H)
    sweeps = 0
    for _ in range(max_sweeps):
        sweeps += 1
        d_prev = d.copy()
        active = valid & (d > 0) & ~done[:, None]
        for j in range(H):
            rows = np.flatnonzero(active[:, j])
            if rows.size == 0:
                continue
            dd = d[rows].copy()
            dd[:, j] = 0.0
            sq = np.sqrt(dd)
            G_r = Gs[rows]
            W = noise_power * eye + sq[:, :, None] * G_r * sq[:, None, :]
            x = np.linalg.solve(W, (sq * G_r[:, :, j])[:, :, None])[:, :, 0]
            bcol = (eye[j] - sq * x) / noise_power
            a = np.real(np.einsum("pk,pk->p", G_r[:, j, :], bcol))
            b = np.real(np.einsum("pk,pk->p", bcol.conj(), np.einsum("pkl,pl->pk", Ts[rows], bcol)))
            d[rows, j] = np.maximum((b - K * a) / (K * a * a), 0.0)
        if history is not None:
            history.append(d.copy())
        num = np.linalg.norm(d - d_prev, axis=1)
        den = np.linalg.norm(d_prev, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.where(den > 0, num / den, np.where(num > 0, np.inf, 0.0))
        done |= rel < rel_tol
        if done.all():
            break
    return d, sweeps


def _bic_batch(d, support, noise_power, stats):
    """BIC on padded supports; zero entries drop out of the determinant exactly."""
    K, N = stats.k, stats.n
    P, H = d.shape
    Gs = stats.G[support[:, :, None], support[:, None, :]]
    Ts = stats.T[support[:, :, None], support[:, None, :]]
    sq = np.sqrt(d)
    eye = np.eye(H)
    W = noise_power * eye + sq[:, :, None] * Gs * sq[:, None, :]
    X = np.linalg.solve(W, np.broadcast_to(eye, W.shape) * sq[:, None, :])
    C = sq[:, :, None] * X
    tr_ct = np.real(np.einsum("pij,pji->p", C, Ts))
    logdet_m = (N - H) * np.log(noise_power) + _hermitian_logdet(W)
    trace = (stats.tr_s - tr_ct) / noise_power
    order = np.count_nonzero(d > 0, axis=1)
    return 2 * K * logdet_m + 2 * trace + order * np.log(2 * N * K), order


def _top_indices(D, h):
    return np.argsort(-D, axis=1, kind="stable")[:, :h]


def _select(D, qs, noise_power, stats, config):
    """Refine top-h supports of every branch for h = 1..nj_max and pick the BIC minimiser."""
    Q, L = D.shape
    H = min(config.nj_max, L)
    top = _top_indices(D, H)
    supports, valid, init, q_of, h_of = [], [], [], [], []
    for qi in range(Q):
        for h in range(1, H + 1):
            idx = np.sort(top[qi, :h])
            pad = np.full(H, idx[0])
            pad[:h] = idx
            mask = np.arange(H) < h
            supports.append(pad)
            valid.append(mask)
            init.append(np.where(mask, D[qi, pad], 0.0))
            q_of.append(qi)
            h_of.append(h)
    supports = np.array(supports)
    valid = np.array(valid)
    d_ref, _ = _refine_batch(np.array(init), supports, valid, noise_power, stats,
                             config.refine_max_iters, config.rel_tol_inner)
    bic, order = _bic_batch(d_ref, supports, noise_power, stats)
    q_vals = qs[np.array(q_of)]
    # the noise-only model (h = 0) competes as well
    K, N = stats.k, stats.n
    bic0 = 2 * K * N * np.log(noise_power) + 2 * stats.tr_s / noise_power
    bic = np.append(bic, bic0)
    order = np.append(order, 0)
    q_vals = np.append(q_vals, qs.min())
    best = int(np.lexsort((q_vals, order, bic))[0])
    d_full = np.zeros(L)
    if best == bic.size - 1:
        return d_full, int(np.argmin(qs)), 0, float(bic0)
    sel = valid[best]
    d_full[supports[best][sel]] = d_ref[best][sel]
    return d_full, int(q_of[best]), int(order[best]), float(bic[best])


def matched_filter_init(stats: GridStats, noise_power: float, floor: float) -> np.ndarray:
    """Beamformer power minus noise, floored so that every entry is strictly positive."""
    return np.maximum(np.real(np.diag(stats.T)) / stats.k - noise_power, floor)


def refine_support(d_in, support, noise_power: float, s: np.ndarray, dictionary: Dictionary, k: int,
                   config: EstimatorConfig = EstimatorConfig(), history: Optional[list] = None) -> np.ndarray:
    """Cyclic coordinate ascent of the likelihood over ``support``.

    Entries of ``d_in`` outside ``support`` are zeroed first. If ``history`` is a
    list, the full power vector after every sweep is appended to it.
    """
    d_in = np.asarray(d_in, dtype=float)
    idx = np.unique(np.asarray(support, dtype=int))
    if idx.size == 0:
        raise ValueError("support must not be empty")
    if np.any(d_in < 0):
        raise ValueError("powers must be nonnegative")
    stats = GridStats(s, dictionary, k)
    sweeps = [] if history is not None else None
    d_ref, _ = _refine_batch(d_in[idx][None, :], idx[None, :], np.ones((1, idx.size), dtype=bool),
                             float(noise_power), stats, config.refine_max_iters, config.rel_tol_inner, sweeps)
    out = np.zeros(dictionary.n_atoms)
    out[idx] = d_ref[0]
    if history is not None:
        for row in sweeps:
            full = np.zeros(dictionary.n_atoms)
            full[idx] = row[0]
            history.append(full)
    return out


def bic_score(d_refined, noise_power: float, s: np.ndarray, dictionary: Dictionary, k: int,
              order: Optional[int] = None) -> float:
    """``2K log det M + 2 Tr(M^-1 S) + h log(2NK)``; ``h`` defaults to the support size."""
    d_refined = np.asarray(d_refined, dtype=float)
    if order is None:
        order = int(np.count_nonzero(d_refined > 0))
    N = dictionary.n_channels
    M = interference_covariance(noise_power, d_refined, dictionary)
    c = np.linalg.cholesky(M)
    logdet = 2.0 * float(np.sum(np.log(np.real(np.diag(c)))))
    trace = float(np.real(np.trace(np.linalg.solve(M, s))))
    return 2 * k * logdet + 2 * trace + order * np.log(2 * N * k)


def estimate_known_sigma(s: np.ndarray, noise_power: float, dictionary: Dictionary, k: int,
                         config: EstimatorConfig = EstimatorConfig(), init: Optional[np.ndarray] = None,
                         stats: Optional[GridStats] = None) -> SparseEstimate:
    """Sparse cyclic estimate of ``d`` for a known noise power.

    Every ``q`` branch runs the fixed-point iteration from ``init`` (matched
    filter by default; an ``(Q, L)`` array warm-starts each branch). The loop
    stops when the ranked top-``nj_max`` grid indices of all branches repeat, when
    all branches change by less than ``rel_tol_inner``, or at ``inner_max_iters``.
    The top-h peaks of every branch are then refined for ``h = 1..nj_max`` and
    the (q, h) pair with the lowest BIC is returned; the all-zero (noise-only)
    solution is a candidate too.
    """
    if noise_power < 1:
        raise ValueError("noise power must be >= 1")
    stats = stats if stats is not None else GridStats(s, dictionary, k)
    qs = np.asarray(config.q_grid)
    Q, L = qs.size, dictionary.n_atoms
    if init is None:
        D = np.tile(matched_filter_init(stats, noise_power, config.init_floor), (Q, 1))
    else:
        D = np.array(np.broadcast_to(np.asarray(init, dtype=float), (Q, L)))
        D = np.where(D > 0, D, config.init_floor)
    H = min(config.nj_max, L)
    traces = [[] for _ in range(Q)]
    prev_top = _top_indices(D, H)
    n_used = 0
    for _ in range(config.inner_max_iters):
        n_used += 1
        D_new, g_in = _fixed_point_batch(D, qs, noise_power, stats)
        for qi in range(Q):
            traces[qi].append(float(g_in[qi]))
        num = np.linalg.norm(D_new - D, axis=1)
        den = np.linalg.norm(D, axis=1)
        D = D_new
        top = _top_indices(D, H)
        converged = np.all(num <= config.rel_tol_inner * den)
        if converged or np.array_equal(top, prev_top):
            break
        prev_top = top
    g_last = _objective_batch(D, qs, noise_power, stats)
    for qi in range(Q):
        traces[qi].append(float(g_last[qi]))
    d_hat, q_idx, order, bic = _select(D, qs, noise_power, stats, config)
    return SparseEstimate(d_hat, float(noise_power), float(qs[q_idx]), order, traces[q_idx], n_used, bic, D)


def noise_mle_h0(s: np.ndarray, n: int, k: int) -> float:
    """Noise-only maximum likelihood estimate ``Tr(S) / (KN)``."""
    return float(np.real(np.trace(s))) / (k * n)


def sigma_log_likelihood(sigma2, eigvals, s_diag, k: int):
    """Log-likelihood in the noise power for fixed jammer eigenvalues (rotated frame)."""
    sigma2 = np.asarray(sigma2, dtype=float)
    lam = np.asarray(eigvals, dtype=float)
    sd = np.asarray(s_diag, dtype=float)
    tot = sigma2[..., None] + lam
    n = lam.size
    return -k * n * np.log(np.pi) - k * np.sum(np.log(tot), axis=-1) - np.sum(sd / tot, axis=-1)


def _sigma_derivative(sigma2, lam, sd, k):
    tot = np.asarray(sigma2, dtype=float)[..., None] + lam
    return np.sum((sd - k * tot) / tot ** 2, axis=-1)


def solve_sigma_stationary(eigvals, s_diag, k: int, n_grid: int = 2048) -> float:
    """Noise power >= 1 maximising the likelihood given the jammer eigenstructure.

    Sign changes of the stationarity equation are bracketed on a logarithmic
    grid over ``[1, Tr(S)/K + max eigval + 1]`` and polished with Brent's
    method. The boundary ``1`` is always a candidate, so the fallback of ``1``
    is automatic when no root lies above it.
    """
    lam = np.asarray(eigvals, dtype=float)
    sd = np.asarray(s_diag, dtype=float)
    if np.all(lam == 0.0):
        root = float(np.sum(sd)) / (lam.size * k)
        candidates = [1.0] + ([root] if root >= 1.0 else [])
    else:
        upper = float(np.sum(sd)) / k + float(np.max(lam)) + 1.0
        grid = np.geomspace(1.0, upper, n_grid)
        f = _sigma_derivative(grid, lam, sd, k)
        candidates = [1.0] + list(grid[f == 0.0])

        def fn(x):
            return float(_sigma_derivative(x, lam, sd, k))

        for i in np.flatnonzero(f[:-1] * f[1:] < 0):
            candidates.append(brentq(fn, grid[i], grid[i + 1], xtol=1e-300, rtol=4 * np.finfo(float).eps))
    candidates = np.array(candidates)
    values = sigma_log_likelihood(candidates, lam, sd, k)
    return float(candidates[int(np.argmax(values))])


def noise_power_step(d, s: np.ndarray, dictionary: Dictionary, k: int) -> float:
    """Noise-power update for fixed ``d`` via the eigendecomposition of ``V diag(d) V^H``."""
    d = np.asarray(d, dtype=float)
    N = dictionary.n_channels
    if not np.any(d > 0):
        return solve_sigma_stationary(np.zeros(N), np.real(np.diag(s)), k)
    V = dictionary.matrix
    R = (V * d) @ V.conj().T
    lam, U = np.linalg.eigh(0.5 * (R + R.conj().T))
    lam, U = np.maximum(lam[::-1], 0.0), U[:, ::-1]
    s_diag = np.real(np.einsum("ij,ik,kj->j", U.conj(), s, U))
    return solve_sigma_stationary(lam, s_diag, k)


def _relative_change(new, old) -> float:
    den = float(np.linalg.norm(old))
    num = float(np.linalg.norm(np.asarray(new) - np.asarray(old)))
    if den == 0.0:
        return 0.0 if num == 0.0 else np.inf
    return num / den


def estimate_joint(s: np.ndarray, dictionary: Dictionary, k: int, config: EstimatorConfig = EstimatorConfig(),
                   stats: Optional[GridStats] = None) -> SparseEstimate:
    """Alternate known-noise estimation of ``d`` with the noise-power update.

    Starts from the noise-only MLE (floored at 1). Each pass warm-starts the
    fixed-point branches from the previous pass. Stops when the summed relative
    changes of ``d`` and the noise power drop below ``rel_tol_outer``.
    """
    stats = stats if stats is not None else GridStats(s, dictionary, k)
    sigma2 = max(noise_mle_h0(s, dictionary.n_channels, k), 1.0)
    states = None
    prev = None
    trace = []
    est = None
    for it in range(1, config.outer_max_iters + 1):
        est = estimate_known_sigma(s, sigma2, dictionary, k, config, init=states, stats=stats)
        states = est.branch_states
        trace.extend(est.objective_trace)
        sigma2_new = noise_power_step(est.d, s, dictionary, k)
        stop = False
        if prev is not None:
            crit = _relative_change(est.d, prev) + abs(sigma2_new - sigma2) / sigma2
            stop = crit < config.rel_tol_outer
        prev = est.d
        sigma2 = sigma2_new
        if stop:
            break
    return SparseEstimate(est.d, sigma2, est.q_selected, est.order, trace, it, est.bic, states)
