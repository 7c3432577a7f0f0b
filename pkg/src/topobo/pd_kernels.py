"""
Kernels between persistence diagrams.

Two families are provided:

* PWGK, the persistence weighted Gaussian kernel. A diagram becomes the
  weighted point measure ``sum_x w(x) delta_x`` with
  ``w(x) = arctan(C * pers(x)**p)``, embedded into the RKHS of a Gaussian
  kernel with bandwidth ``nu``. The linear variant is the RKHS inner
  product of two embeddings; the Gaussian variant applies an outer Gaussian
  of bandwidth ``tau`` to the RKHS distance. Random Fourier features give
  an optional finite-dimensional approximation.
* PFK, the persistence Fisher kernel ``exp(-t * d_FIM)``. Each diagram is
  augmented with the diagonal projection of the other, smoothed into an
  isotropic Gaussian mixture, and the two mixtures are compared through the
  Fisher information metric evaluated on the finite point set formed by
  both augmented diagrams.

Every kernel treats its two arguments in a canonical order, so
``k(A, B) == k(B, A)`` holds bit for bit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import pdist

from .persistence import PersistenceDiagram

logger = logging.getLogger(__name__)

KERNELS = ("pwgk_linear", "pwgk_gaussian", "pfk")
PFK_NU_GRID = (1e-3, 10.0, 1e3)
PFK_QUANTILES = (1, 2, 5, 10, 20, 50)


def _check_positive(**values):
    for name, v in values.items():
        if v is None:
            continue
        if not (np.isfinite(v) and v > 0):
            raise ValueError(f"{name} must be positive and finite, got {v}")


@dataclass(frozen=True)
class PwgkParams:
    C: float
    nu: float
    p: float = 5.0
    tau: Optional[float] = None

    def __post_init__(self):
        _check_positive(C=self.C, nu=self.nu, p=self.p, tau=self.tau)


@dataclass(frozen=True)
class PfkParams:
    nu: float
    t: float

    def __post_init__(self):
        _check_positive(nu=self.nu, t=self.t)


@dataclass(frozen=True)
class RffEmbedding:
    """Random Fourier features for the Gaussian kernel of bandwidth ``nu``."""

    num_features: int
    seed: int
    nu: float
    frequencies: np.ndarray = field(repr=False)
    phases: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, num_features: int, nu: float, seed: int = 0) -> "RffEmbedding":
        _check_positive(nu=nu)
        rng = np.random.default_rng(seed)
        freqs = rng.normal(0.0, 1.0 / nu, size=(num_features, 2))
        phases = rng.uniform(0.0, 2 * np.pi, size=num_features)
        return cls(num_features, seed, float(nu), freqs, phases)


def _pts(D) -> np.ndarray:
    if isinstance(D, PersistenceDiagram):
        return D.points
    return np.asarray(D, dtype=float).reshape(-1, 2)


def _canonical(Di: np.ndarray, Dj: np.ndarray):
    """Fixed argument order so symmetric kernels are symmetric in floating point."""
    ki = (Di.shape[0], Di.tobytes())
    kj = (Dj.shape[0], Dj.tobytes())
    return (Dj, Di) if kj < ki else (Di, Dj)


def pers(x) -> float | np.ndarray:
    """Persistence ``death - birth`` of one point or of each row of an array."""
    x = np.asarray(x, dtype=float)
    return x[..., 1] - x[..., 0]


def pwgk_weight(x, params: PwgkParams):
    return np.arctan(params.C * pers(x) ** params.p)


def _sq_dists(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    d = A[:, None, :] - B[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


def _weighted_gauss_sum(A, B, wa, wb, nu) -> float:
    if A.shape[0] == 0 or B.shape[0] == 0:
        return 0.0
    E = np.exp(-_sq_dists(A, B) / (2 * nu * nu))
    return float(wa @ E @ wb)


def pwgk_inner(Di, Dj, params: PwgkParams) -> float:
    """PWGK-Linear: RKHS inner product of the two weighted embeddings."""
    A, B = _canonical(_pts(Di), _pts(Dj))
    return _weighted_gauss_sum(A, B, pwgk_weight(A, params), pwgk_weight(B, params), params.nu)


def rkhs_sq_distance(Di, Dj, params: PwgkParams) -> float:
    A, B = _canonical(_pts(Di), _pts(Dj))
    wa, wb = pwgk_weight(A, params), pwgk_weight(B, params)
    d2 = (
        _weighted_gauss_sum(A, A, wa, wa, params.nu)
        + _weighted_gauss_sum(B, B, wb, wb, params.nu)
        - 2 * _weighted_gauss_sum(A, B, wa, wb, params.nu)
    )
    return max(d2, 0.0)


def pwgk_gaussian(Di, Dj, params: PwgkParams) -> float:
    if params.tau is None:
        raise ValueError("PWGK-Gaussian needs tau")
    if np.array_equal(_pts(Di), _pts(Dj)):
        return 1.0
    return float(np.exp(-rkhs_sq_distance(Di, Dj, params) / (2 * params.tau ** 2)))


def rff_embed(D, params: PwgkParams, emb: RffEmbedding) -> np.ndarray:
    if not np.isclose(emb.nu, params.nu, rtol=1e-12):
        raise ValueError("embedding was built for a different bandwidth")
    X = _pts(D)
    if X.shape[0] == 0:
        return np.zeros(emb.num_features)
    w = pwgk_weight(X, params)
    phase = X @ emb.frequencies.T + emb.phases
    return np.sqrt(2.0 / emb.num_features) * (w @ np.cos(phase))


# --- persistence Fisher kernel ---------------------------------------------

def _diag_proj(X: np.ndarray) -> np.ndarray:
    m = (X[:, 0] + X[:, 1]) / 2
    return np.column_stack([m, m])


def pfk_fim(Di, Dj, nu: float) -> float:
    """Fisher information metric between the smoothed, augmented diagrams.

    Both mixtures are evaluated on the points of ``Di + proj(Dj)`` and
    ``Dj + proj(Di)`` and normalized to sum to one there; the result is the
    arccos of their Bhattacharyya coefficient. Two empty diagrams are at
    distance 0.
    """
    _check_positive(nu=nu)
    A, B = _canonical(_pts(Di), _pts(Dj))
    if A.shape[0] == 0 and B.shape[0] == 0:
        return 0.0
    Ai = np.vstack([A, _diag_proj(B)])
    Bj = np.vstack([B, _diag_proj(A)])
    theta = np.vstack([Ai, Bj])
    scale = 2 * nu * nu
    rho_i = np.exp(-_sq_dists(theta, Ai) / scale).sum(axis=1)
    rho_j = np.exp(-_sq_dists(theta, Bj) / scale).sum(axis=1)
    si, sj = rho_i.sum(), rho_j.sum()
    if si <= 0 or sj <= 0:
        # every component underflowed at every evaluation point
        return float(np.pi / 2)
    return fisher_distance(rho_i / si, rho_j / sj)


def fisher_distance(p: np.ndarray, q: np.ndarray) -> float:
    """Great-circle distance ``arccos(sum sqrt(p q))`` between two discrete densities.

    Evaluated as ``2 arcsin(|sqrt p - sqrt q| / 2)``, which equals the arccos
    form with its argument clipped to [0, 1] but keeps full relative
    precision for nearly equal densities.
    """
    chord = np.linalg.norm(np.sqrt(p) - np.sqrt(q))
    return float(2 * np.arcsin(min(chord / 2, 1.0)))


def pfk(Di, Dj, params: PfkParams) -> float:
    return float(np.exp(-params.t * pfk_fim(Di, Dj, params.nu)))


def pfk_distance_matrix(diagrams: Sequence, nu: float) -> np.ndarray:
    n = len(diagrams)
    P = [_pts(D) for D in diagrams]
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = pfk_fim(P[i], P[j], nu)
    return out


# --- hyperparameter heuristics ----------------------------------------------

@dataclass(frozen=True)
class KernelHeuristics:
    """Median-based PWGK parameters and the PFK search grid."""

    pwgk: PwgkParams
    pfk_grid: tuple[PfkParams, ...] = ()
    pfk_distances: dict = field(default_factory=dict, repr=False, compare=False)


def _median_or_none(values):
    values = [v for v in values if np.isfinite(v)]
    return float(np.median(values)) if values else None


def heuristics(
    diagrams: Sequence,
    include_pfk: bool = True,
    nu_grid: Sequence[float] = PFK_NU_GRID,
    quantiles: Sequence[float] = PFK_QUANTILES,
) -> KernelHeuristics:
    """Fix PWGK parameters by medians over a pool and build the PFK grid.

    ``C`` is the median of per-diagram median persistences, ``p = 5``,
    ``nu`` the median of per-diagram median pairwise point distances and
    ``tau`` the median pairwise RKHS distance. The PFK grid pairs every
    ``nu`` in ``nu_grid`` with ``1/t`` set to the requested percentiles of
    the pairwise Fisher distances at that ``nu``.
    """
    P = [_pts(D) for D in diagrams]
    if len(P) < 2:
        raise ValueError("heuristics need at least two diagrams")
    nonempty = [X for X in P if X.shape[0]]
    if not nonempty:
        raise ValueError("all diagrams are empty; no statistics available")

    C = _median_or_none(np.median(pers(X)) for X in nonempty)

    nu = _median_or_none(np.median(pdist(X)) for X in nonempty if X.shape[0] >= 2)
    if not nu:
        pooled = pdist(np.vstack(nonempty)) if sum(len(X) for X in nonempty) >= 2 else np.array([])
        pooled = pooled[pooled > 0]
        nu = float(np.median(pooled)) if pooled.size else 1.0
        logger.info("nu heuristic fell back to pooled point distances: %g", nu)

    base = PwgkParams(C=C, nu=nu)
    lin = gram(P, "pwgk_linear", base)
    dg = np.diag(lin)
    d2 = np.clip(dg[:, None] + dg[None, :] - 2 * lin, 0.0, None)
    iu = np.triu_indices(len(P), k=1)
    tau = float(np.median(np.sqrt(d2[iu])))
    if not tau > 0:
        tau = 1.0
        logger.info("all RKHS distances vanish; tau set to 1")
    params = PwgkParams(C=C, nu=nu, tau=tau)

    grid, dists = [], {}
    if include_pfk:
        for pnu in nu_grid:
            Dm = pfk_distance_matrix(P, pnu)
            dists[pnu] = Dm
            qs = np.percentile(Dm[iu], list(quantiles))
            positive = qs[qs > 0]
            for q in qs:
                inv_t = q if q > 0 else (positive.min() if positive.size else 1.0)
                grid.append(PfkParams(nu=pnu, t=1.0 / inv_t))
    return KernelHeuristics(params, tuple(grid), dists)


# --- Gram matrices -----------------------------------------------------------

def _pwgk_linear_gram(P, params: PwgkParams) -> np.ndarray:
    n = len(P)
    sizes = np.array([X.shape[0] for X in P])
    allpts = np.vstack([X for X in P if X.shape[0]]) if sizes.sum() else np.empty((0, 2))
    owner = np.repeat(np.arange(n), sizes)
    w_all = pwgk_weight(allpts, params)
    sq_all = (allpts ** 2).sum(axis=1)
    G = np.zeros((n, n))
    scale = 2 * params.nu ** 2
    for i, X in enumerate(P):
        if X.shape[0] == 0:
            continue
        d2 = (X ** 2).sum(axis=1)[:, None] + sq_all[None, :] - 2 * X @ allpts.T
        np.maximum(d2, 0.0, out=d2)
        v = pwgk_weight(X, params) @ np.exp(-d2 / scale)
        G[i] = np.bincount(owner, weights=v * w_all, minlength=n)
    upper = np.triu(G)
    return upper + np.triu(G, k=1).T


def _gaussian_from_linear(L: np.ndarray, tau: float) -> np.ndarray:
    dg = np.diag(L)
    d2 = np.clip(dg[:, None] + dg[None, :] - 2 * L, 0.0, None)
    K = np.exp(-d2 / (2 * tau * tau))
    np.fill_diagonal(K, 1.0)
    return K


def gram(
    diagrams: Sequence,
    kernel: str,
    params,
    rff: Optional[RffEmbedding] = None,
) -> np.ndarray:
    """Symmetric Gram matrix of ``kernel`` over ``diagrams``.

    ``params`` is a :class:`PwgkParams` for the PWGK kernels and a
    :class:`PfkParams` for PFK. Passing ``rff`` switches PWGK to the random
    feature approximation.
    """
    P = [_pts(D) for D in diagrams]
    if kernel in ("pwgk_linear", "pwgk_gaussian"):
        if rff is not None:
            Phi = np.array([rff_embed(X, params, rff) for X in P]).reshape(len(P), -1)
            L = Phi @ Phi.T
            L = (L + L.T) / 2
        else:
            L = _pwgk_linear_gram(P, params)
        if kernel == "pwgk_linear":
            return L
        if params.tau is None:
            raise ValueError("PWGK-Gaussian needs tau")
        return _gaussian_from_linear(L, params.tau)
    if kernel == "pfk":
        return np.exp(-params.t * pfk_distance_matrix(P, params.nu))
    raise ValueError(f"unknown kernel {kernel!r}; expected one of {KERNELS}")
