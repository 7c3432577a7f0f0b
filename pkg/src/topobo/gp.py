"""
Zero-mean Gaussian-process regression on a precomputed Gram matrix.

The GP never sees inputs, only kernel values: :func:`fit` factorizes the
observed block ``K + noise_var * I`` and :func:`predict` /
:func:`predict_many` turn cross-covariance rows into predictive means and
variances. Noise variance is chosen by maximizing the marginal likelihood,
and candidates are scored with expected improvement for minimization.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import ndtr

logger = logging.getLogger(__name__)

JITTER_START = 1e-10
JITTER_MAX = 1e-4
NOISE_FLOOR = 1e-6
_GOLDEN = (np.sqrt(5) - 1) / 2


class GPNumericalError(np.linalg.LinAlgError):
    """Cholesky factorization failed even at the largest jitter."""


@dataclass(frozen=True)
class GPState:
    observed: tuple
    y: np.ndarray
    noise_var: float
    jitter: float
    chol: np.ndarray = field(repr=False)
    alpha_vec: np.ndarray = field(repr=False)

    @property
    def log_likelihood(self) -> float:
        """``-1/2 log|K + s I| - 1/2 y^T (K + s I)^{-1} y`` (constant dropped)."""
        return float(-np.log(np.diag(self.chol)).sum() - 0.5 * self.y @ self.alpha_vec)


def cholesky_jitter(A: np.ndarray, start: float = JITTER_START, ceiling: float = JITTER_MAX):
    """Lower Cholesky factor of ``A + jitter * I`` with jitter escalated by 10x.

    Returns ``(L, jitter)``. ``A`` itself is tried first, then jitter from
    ``start`` upwards; if every attempt up to ``ceiling`` fails,
    :class:`GPNumericalError` is raised with the smallest eigenvalue of ``A``.
    """
    A = np.asarray(A, dtype=float)
    try:
        return np.linalg.cholesky(A), 0.0
    except np.linalg.LinAlgError:
        pass
    eye = np.eye(A.shape[0])
    jitter = start
    while jitter <= ceiling * (1 + 1e-9):
        try:
            return np.linalg.cholesky(A + jitter * eye), jitter
        except np.linalg.LinAlgError:
            jitter *= 10
    lam = float(np.linalg.eigvalsh((A + A.T) / 2).min()) if A.size else 0.0
    raise GPNumericalError(
        f"matrix not positive definite after jitter {ceiling:g}; smallest eigenvalue {lam:.3e}"
    )


def fit(K_obs, y, noise_var: float, observed=None) -> GPState:
    K_obs = np.asarray(K_obs, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if K_obs.shape != (y.size, y.size):
        raise ValueError(f"K_obs has shape {K_obs.shape}, expected {(y.size, y.size)}")
    if noise_var < 0:
        raise ValueError("noise_var must be non-negative")
    L, jitter = cholesky_jitter(K_obs + noise_var * np.eye(y.size))
    alpha_vec = cho_solve((L, True), y)
    if observed is None:
        observed = tuple(range(y.size))
    state = GPState(tuple(int(i) for i in observed), y, float(noise_var), jitter, L, alpha_vec)
    logger.debug(
        "gp fit: n=%d jitter=%.0e noise_var=%.4g loglik=%.6g",
        y.size, jitter, noise_var, state.log_likelihood,
    )
    return state


def predict(state: GPState, k_vec, k_self: float):
    """Predictive mean and variance at one candidate; variance clamped at 0."""
    mu, var = predict_many(state, np.atleast_2d(np.asarray(k_vec, dtype=float)), np.array([k_self]))
    return float(mu[0]), float(var[0])


def predict_many(state: GPState, K_cross, k_diag):
    """Vectorized :func:`predict`; ``K_cross`` has one row per candidate."""
    K_cross = np.asarray(K_cross, dtype=float)
    mu = K_cross @ state.alpha_vec
    V = solve_triangular(state.chol, K_cross.T, lower=True)
    var = np.asarray(k_diag, dtype=float) - np.einsum("ij,ij->j", V, V)
    return mu, np.maximum(var, 0.0)


def log_likelihood(K, y, noise_var: float) -> float:
    return fit(K, y, noise_var).log_likelihood


def _golden_max(f, a: float, b: float, tol: float = 1e-6, max_iter: int = 100):
    """Golden-section search for the maximum of a unimodal ``f`` on [a, b]."""
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if abs(b - a) <= tol * max(1.0, abs(c) + abs(d)):
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    return (c, fc) if fc >= fd else (d, fd)


def mle_noise(K, y, n_grid: int = 25) -> float:
    """Maximum-likelihood noise variance for a fixed Gram matrix.

    The search runs over ``[1e-6 var(y), var(y)]``: a log-spaced grid of
    ``n_grid`` points, then golden-section refinement (in log space) on the
    cells either side of the best grid point. Constant ``y`` returns
    ``NOISE_FLOOR``.
    """
    y = np.asarray(y, dtype=float).ravel()
    if y.size < 2:
        raise ValueError("mle_noise needs at least two observations")
    vy = float(np.var(y))
    if vy <= 0:
        return NOISE_FLOOR
    K = np.asarray(K, dtype=float)
    lo, hi = np.log(1e-6 * vy), np.log(vy)
    grid = np.linspace(lo, hi, n_grid)

    def score(log_s):
        try:
            return log_likelihood(K, y, float(np.exp(log_s)))
        except GPNumericalError:
            return -np.inf

    vals = np.array([score(g) for g in grid])
    if not np.isfinite(vals).any():
        raise GPNumericalError("no noise level on the search grid gives a valid factorization")
    best = int(np.argmax(vals))
    a = grid[max(best - 1, 0)]
    b = grid[min(best + 1, n_grid - 1)]
    x, fx = _golden_max(score, a, b)
    if fx < vals[best]:
        x = grid[best]
    return float(np.clip(np.exp(x), np.exp(lo), np.exp(hi)))


def expected_improvement(mu, sd, y_best):
    """EI for minimization; zero wherever ``sd`` is zero. Broadcasts over arrays."""
    mu = np.asarray(mu, dtype=float)
    sd = np.asarray(sd, dtype=float)
    if np.any(sd < 0):
        raise ValueError("sd must be non-negative")
    safe = np.where(sd > 0, sd, 1.0)
    with np.errstate(over="ignore"):
        z = (y_best - mu) / safe
        pdf = np.exp(-0.5 * z * z) / np.sqrt(2 * np.pi)
    # sd * (z Phi(z) + phi(z)) without inf * 0 at tiny sd
    ei = (y_best - mu) * ndtr(z) + safe * pdf
    ei = np.where(sd > 0, np.maximum(ei, 0.0), 0.0)
    return float(ei) if ei.ndim == 0 else ei
