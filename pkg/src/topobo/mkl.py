"""
Nonnegative combinations of Gram matrices.

Weights are learned either by centered kernel-target alignment (a small
nonnegative QP solved by projected gradient) or by maximizing the GP
marginal likelihood with gradient ascent on softplus-reparameterized
weights.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import cho_solve

from .gp import cholesky_jitter

logger = logging.getLogger(__name__)


class AlignmentUndefined(ValueError):
    """A centered Gram matrix has zero Frobenius norm."""


@dataclass(frozen=True)
class MklWeights:
    alpha: np.ndarray
    #: log-likelihood after every accepted ascent step (MLE path only)
    history: tuple = ()

    def __post_init__(self):
        a = np.array(self.alpha, dtype=float).ravel()
        if np.any(a < 0) or not np.any(a > 0):
            raise ValueError("weights must be nonnegative with at least one positive entry")
        a.setflags(write=False)
        object.__setattr__(self, "alpha", a)

    @classmethod
    def uniform(cls, k: int) -> "MklWeights":
        return cls(np.full(k, 1.0 / k))


def combine(Ks: Sequence[np.ndarray], w) -> np.ndarray:
    alpha = w.alpha if isinstance(w, MklWeights) else np.asarray(w, dtype=float)
    if len(Ks) != alpha.size:
        raise ValueError(f"{len(Ks)} matrices but {alpha.size} weights")
    shape = np.shape(Ks[0])
    if any(np.shape(K) != shape for K in Ks):
        raise ValueError("Gram matrices have mismatched dimensions")
    if np.any(alpha < 0):
        raise ValueError("weights must be nonnegative")
    out = np.zeros(shape)
    for a, K in zip(alpha, Ks):
        out += a * np.asarray(K, dtype=float)
    return out


def center_gram(K) -> np.ndarray:
    K = np.asarray(K, dtype=float)
    return K - K.mean(axis=0, keepdims=True) - K.mean(axis=1, keepdims=True) + K.mean()


def _frob(A, B) -> float:
    return float(np.einsum("ij,ij->", A, B))


def alignment(K, K2) -> float:
    Kc, K2c = center_gram(K), center_gram(K2)
    n1, n2 = np.sqrt(_frob(Kc, Kc)), np.sqrt(_frob(K2c, K2c))
    if n1 == 0 or n2 == 0:
        raise AlignmentUndefined("alignment undefined for a matrix with zero centered norm")
    return float(np.clip(_frob(Kc, K2c) / (n1 * n2), -1.0, 1.0))


def alignment_qp(Ks: Sequence[np.ndarray], y):
    """The matrix ``M`` and vector ``a`` of the alignment QP."""
    y = np.asarray(y, dtype=float).ravel()
    Kcs = [center_gram(K) for K in Ks]
    for i, Kc in enumerate(Kcs):
        if _frob(Kc, Kc) == 0:
            raise AlignmentUndefined(f"Gram matrix {i} is constant after centering")
    M = np.array([[_frob(A, B) for B in Kcs] for A in Kcs])
    Y = np.outer(y, y)
    a = np.array([_frob(Kc, Y) for Kc in Kcs])
    return M, a


def qp_objective(v, M, a) -> float:
    v = np.asarray(v, dtype=float)
    return float(v @ M @ v - 2 * v @ a)


def solve_alignment_qp(Ks: Sequence[np.ndarray], y, tol: float = 1e-10, max_iter: int = 10_000) -> MklWeights:
    """Alignment-maximizing weights, normalized to unit Euclidean norm.

    Minimizes ``v^T M v - 2 v^T a`` over ``v >= 0`` by projected gradient
    with step ``1 / lambda_max(M)`` from the uniform start. If the solution
    is zero (no kernel aligns positively with the targets) uniform weights
    are returned with a warning.
    """
    M, a = alignment_qp(Ks, y)
    k = len(Ks)
    v = np.full(k, 1.0 / np.sqrt(k))
    L = float(np.linalg.eigvalsh(M).max())
    step = 1.0 / L if L > 0 else 1.0
    for _ in range(max_iter):
        grad = 2 * (M @ v - a)
        nxt = np.maximum(v - step * grad / 2, 0.0)
        moved = np.linalg.norm(nxt - v)
        v = nxt
        if moved < tol:
            break
    norm = np.linalg.norm(v)
    if norm == 0:
        warnings.warn("alignment QP has a zero solution; falling back to uniform weights", RuntimeWarning)
        return MklWeights(np.full(k, 1.0 / np.sqrt(k)))
    return MklWeights(v / norm)


def _softplus(b):
    return np.logaddexp(0.0, b)


def _softplus_inv(a):
    a = np.asarray(a, dtype=float)
    # log(exp(a) - 1) without overflow for large a
    return a + np.log(-np.expm1(-a))


def _sigmoid(b):
    return 0.5 * (1 + np.tanh(b / 2))


def mkl_log_likelihood(Ks, y, alpha, noise_var: float) -> float:
    y = np.asarray(y, dtype=float).ravel()
    G = combine(Ks, alpha) + noise_var * np.eye(y.size)
    L, _ = cholesky_jitter(G)
    return float(-np.log(np.diag(L)).sum() - 0.5 * y @ cho_solve((L, True), y))


def mkl_log_likelihood_grad(Ks, y, alpha, noise_var: float):
    """Log-likelihood and its gradient with respect to the weights."""
    y = np.asarray(y, dtype=float).ravel()
    G = combine(Ks, alpha) + noise_var * np.eye(y.size)
    L, _ = cholesky_jitter(G)
    Ginv_y = cho_solve((L, True), y)
    Ginv = cho_solve((L, True), np.eye(y.size))
    ll = float(-np.log(np.diag(L)).sum() - 0.5 * y @ Ginv_y)
    grad = np.array([
        0.5 * Ginv_y @ K @ Ginv_y - 0.5 * np.einsum("ij,ji->", Ginv, K)
        for K in Ks
    ])
    return ll, grad


def unit_scales(Ks) -> np.ndarray:
    d = np.array([np.mean(np.diag(K)) for K in Ks], dtype=float)
    return np.where(d > 0, d, 1.0)


def mle_weights(
    Ks: Sequence[np.ndarray],
    y,
    noise_var: float,
    init: Optional[np.ndarray] = None,
    tol: float = 1e-6,
    max_iter: int = 500,
) -> MklWeights:
    """Marginal-likelihood weights by gradient ascent on ``alpha = softplus(beta)``.

    The ascent runs on the kernels rescaled to unit mean diagonal (weights
    are mapped back to the caller's units on return), so the step size and
    stopping tolerance do not depend on the raw magnitude of each Gram
    matrix. Starts from ``init`` in caller units, or from uniform ``1/k``
    on the rescaled kernels. Steepest ascent in ``beta`` with Armijo
    backtracking; stops when the gradient norm drops below ``tol`` or after
    ``max_iter`` iterations. ``history`` holds the log-likelihood at the
    start and after every accepted step, so it never decreases.
    """
    k = len(Ks)
    scale = unit_scales(Ks)
    Kn = [np.asarray(K, dtype=float) / s for K, s in zip(Ks, scale)]
    if init is None:
        alpha = np.full(k, 1.0 / k)
    else:
        alpha = np.asarray(init, dtype=float) * scale
    alpha = np.maximum(alpha, 1e-12)
    beta = _softplus_inv(alpha)
    ll, g_alpha = mkl_log_likelihood_grad(Kn, y, alpha, noise_var)
    history = [ll]
    step = 1.0
    for _ in range(max_iter):
        g = g_alpha * _sigmoid(beta)
        gnorm = float(np.linalg.norm(g))
        if gnorm < tol:
            break
        accepted = False
        step = min(step * 2.0, 1e6)
        while step > 1e-12:
            b_new = beta + step * g
            a_new = _softplus(b_new)
            if np.all(a_new > 0):
                try:
                    ll_new, g_new = mkl_log_likelihood_grad(Kn, y, a_new, noise_var)
                except np.linalg.LinAlgError:
                    ll_new = -np.inf
                if ll_new >= ll + 1e-4 * step * gnorm ** 2:
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            break
        beta, alpha, ll, g_alpha = b_new, a_new, ll_new, g_new
        history.append(ll)
    logger.debug("mle_weights: alpha=%s loglik=%.6g iters=%d", alpha / scale, ll, len(history) - 1)
    return MklWeights(alpha / scale, tuple(history))
