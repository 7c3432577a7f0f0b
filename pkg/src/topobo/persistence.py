"""
Persistence diagrams of point clouds under the Vietoris-Rips filtration.

The filtration parameter is the ball radius: an edge between two points
enters at half their Euclidean distance, and a triangle enters with its
longest edge. Degree-0 diagrams come from a union-find pass over the
sorted edges; degree-1 diagrams come from a GF(2) reduction of the
coboundary matrix (edges against triangles) with clearing, which yields
the same pairs as the standard boundary-matrix reduction.

Simplices are totally ordered by ``(value, dimension, vertex tuple)`` so
every reduction is deterministic. Essential classes and zero-persistence
pairs are never reported.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from math import comb
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from numba import njit, types
from numba.typed import Dict

logger = logging.getLogger(__name__)

#: default ceiling on the number of candidate triangles for degree-1 work
DEFAULT_SIMPLEX_BUDGET = 50_000_000


class SimplexBudgetError(RuntimeError):
    """Raised when a degree-1 computation would exceed the triangle budget."""


@dataclass(frozen=True)
class PointCloud:
    """A finite set of points in R^d, optionally labelled with an objective value."""

    id: str
    points: np.ndarray
    label: Optional[float] = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1) if pts.size else pts.reshape(0, 1)
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise ValueError(f"cloud {self.id!r}: expected an (N, d) array with N >= 1")
        if not np.all(np.isfinite(pts)):
            raise ValueError(f"cloud {self.id!r}: non-finite coordinates")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.label is not None:
            object.__setattr__(self, "label", float(self.label))

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class PersistenceDiagram:
    """Finite (birth, death) pairs for a single homology degree."""

    degree: int
    points: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))

    def __post_init__(self):
        if self.degree not in (0, 1):
            raise ValueError("degree must be 0 or 1")
        pts = np.array(self.points, dtype=float).reshape(-1, 2)
        if not np.all(np.isfinite(pts)):
            raise ValueError("diagram coordinates must be finite")
        if np.any(pts[:, 0] >= pts[:, 1]):
            raise ValueError("every diagram point needs birth < death")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def persistence(self) -> np.ndarray:
        return self.points[:, 1] - self.points[:, 0]

    def sorted_points(self) -> np.ndarray:
        """Points in lexicographic (birth, death) order, handy for comparisons."""
        if len(self) == 0:
            return self.points.copy()
        order = np.lexsort((self.points[:, 1], self.points[:, 0]))
        return self.points[order]


@dataclass(frozen=True, order=True)
class FilteredEdge:
    value: float
    i: int
    j: int


def radius_matrix(points) -> np.ndarray:
    """Pairwise filtration values (half the Euclidean distances)."""
    pts = np.asarray(points, dtype=float)
    if not np.all(np.isfinite(pts)):
        raise ValueError("non-finite coordinates")
    diff = pts[:, None, :] - pts[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff)) / 2.0


def _points(cloud) -> np.ndarray:
    return cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float)


def _sorted_edges(R: np.ndarray, max_radius: float):
    """Upper-triangle edges with value <= max_radius in (value, i, j) order."""
    iu, ju = np.triu_indices(R.shape[0], k=1)
    vals = R[iu, ju]
    keep = vals <= max_radius
    iu, ju, vals = iu[keep], ju[keep], vals[keep]
    order = np.lexsort((ju, iu, vals))
    return iu[order], ju[order], vals[order]


def rips_edges(cloud, max_radius: float) -> list[FilteredEdge]:
    if not max_radius > 0:
        raise ValueError("max_radius must be positive")
    R = radius_matrix(_points(cloud))
    iu, ju, vals = _sorted_edges(R, max_radius)
    return [FilteredEdge(float(v), int(i), int(j)) for i, j, v in zip(iu, ju, vals)]


def enclosing_radius(cloud) -> float:
    """Smallest radius at which some vertex is joined to every other vertex.

    Beyond it the Rips complex is a cone, so degree-1 homology is trivial.
    """
    pts = _points(cloud)
    if pts.shape[0] < 2:
        return 0.0
    return float(radius_matrix(pts).max(axis=1).min())


def diameter_radius(cloud) -> float:
    """Half the largest pairwise distance; the full MST is present here."""
    pts = _points(cloud)
    if pts.shape[0] < 2:
        return 0.0
    return float(radius_matrix(pts).max())


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        parent = self.parent
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        # all births are 0, so the elder rule leaves the choice of survivor free
        if ra < rb:
            ra, rb = rb, ra
        self.parent[ra] = rb
        return True


def _h0_from_edges(n: int, iu, ju, vals):
    """Union-find pass; returns the diagram deaths and a mask of merging edges."""
    uf = _UnionFind(n)
    merging = np.zeros(len(vals), dtype=bool)
    for e, (i, j) in enumerate(zip(iu.tolist(), ju.tolist())):
        if uf.union(i, j):
            merging[e] = True
    return vals[merging], merging


def _default_radius(pts, max_radius, fallback):
    if max_radius is None:
        max_radius = fallback(pts)
        if max_radius <= 0:
            return None
    elif not max_radius > 0:
        raise ValueError("max_radius must be positive")
    return float(max_radius)


def compute_h0(cloud, max_radius: Optional[float] = None) -> PersistenceDiagram:
    """Degree-0 diagram: one (0, r) point per component merge at radius r.

    With the default ``max_radius`` (half the diameter) the deaths are the
    N - 1 minimum-spanning-tree edge values. Merges at radius 0 (duplicate
    points) carry no persistence and are dropped.
    """
    pts = _points(cloud)
    max_radius = _default_radius(pts, max_radius, diameter_radius)
    if max_radius is None:
        return PersistenceDiagram(0)
    R = radius_matrix(pts)
    iu, ju, vals = _sorted_edges(R, max_radius)
    deaths, _ = _h0_from_edges(pts.shape[0], iu, ju, vals)
    deaths = deaths[deaths > 0]
    return PersistenceDiagram(0, np.column_stack([np.zeros_like(deaths), deaths]))


def triangle_count_bound(n_points: int) -> int:
    return comb(n_points, 3)


def compute_h1(
    cloud,
    max_radius: Optional[float] = None,
    simplex_budget: int = DEFAULT_SIMPLEX_BUDGET,
) -> PersistenceDiagram:
    """Degree-1 diagram of the Rips complex truncated at ``max_radius``.

    Raises :class:`SimplexBudgetError` when the cloud is too large for the
    triangle budget; subsample it first.
    """
    pts = _points(cloud)
    n = pts.shape[0]
    if n < 3:
        return PersistenceDiagram(1)
    if triangle_count_bound(n) > simplex_budget:
        raise SimplexBudgetError(
            f"{n} points give up to {triangle_count_bound(n)} triangles "
            f"(budget {simplex_budget}); subsample the cloud first, "
            "e.g. subsample_maxmin(cloud, 300, seed)"
        )
    max_radius = _default_radius(pts, max_radius, enclosing_radius)
    if max_radius is None:
        return PersistenceDiagram(1)

    R = radius_matrix(pts)
    iu, ju, vals = _sorted_edges(R, max_radius)
    _, merging = _h0_from_edges(n, iu, ju, vals)
    births, deaths = _reduce_coboundary(R, iu, ju, vals, merging, float(max_radius))
    pairs = np.column_stack([births, deaths])[::-1]
    return PersistenceDiagram(1, pairs)


@njit(cache=True)
def _cofacets(R, i, j, v, max_radius):
    """Cofacet triangle keys of edge (i, j), ascending, with their values.

    Generating k in increasing order yields keys a*n^2 + b*n + c that are
    already sorted, since (a, b, c) is the sorted vertex triple.
    """
    n = R.shape[0]
    keys = np.empty(n, np.int64)
    tvals = np.empty(n, np.float64)
    m = 0
    for k in range(n):
        if k == i or k == j:
            continue
        t = max(v, R[i, k], R[j, k])
        if t > max_radius:
            continue
        if k < i:
            key = (k * n + i) * n + j
        elif k < j:
            key = (i * n + k) * n + j
        else:
            key = (i * n + j) * n + k
        keys[m] = key
        tvals[m] = t
        m += 1
    return keys[:m], tvals[:m]


@njit(cache=True)
def _tri_value(R, key):
    n = R.shape[0]
    c = key % n
    ab = key // n
    b = ab % n
    a = ab // n
    return max(R[a, b], R[a, c], R[b, c])


@njit(cache=True)
def _pivot(R, keys):
    best_key = -1
    best_val = np.inf
    for key in keys:
        t = _tri_value(R, key)
        # keys ascend, so the first minimum is the lexicographically smallest
        if t < best_val:
            best_val = t
            best_key = key
    return best_key, best_val


@njit(cache=True)
def _xor_sorted(a, b):
    out = np.empty(a.size + b.size, np.int64)
    p = q = m = 0
    while p < a.size and q < b.size:
        if a[p] < b[q]:
            out[m] = a[p]
            p += 1
            m += 1
        elif b[q] < a[p]:
            out[m] = b[q]
            q += 1
            m += 1
        else:
            p += 1
            q += 1
    while p < a.size:
        out[m] = a[p]
        p += 1
        m += 1
    while q < b.size:
        out[m] = b[q]
        q += 1
        m += 1
    return out[:m]


@njit(cache=True)
def _reduce_coboundary(R, iu, ju, vals, merging, max_radius):
    """Cohomology reduction of edge columns, last edge first.

    The pivot of a column is its earliest triangle in the simplex order.
    Merging edges are cleared. Columns that never needed an addition are
    recomputed on demand instead of stored.
    """
    pivot_owner = Dict.empty(key_type=types.int64, value_type=types.int64)
    stored = Dict.empty(key_type=types.int64, value_type=types.int64[:])
    births = []
    deaths = []
    for e in range(vals.size - 1, -1, -1):
        if merging[e]:
            continue
        v = vals[e]
        col, tv = _cofacets(R, iu[e], ju[e], v, max_radius)
        reduced = False
        while col.size > 0:
            if reduced:
                p, death = _pivot(R, col)
            else:
                # the raw column already carries its triangle values
                p = -1
                death = np.inf
                for s in range(col.size):
                    if tv[s] < death:
                        death = tv[s]
                        p = col[s]
            if p not in pivot_owner:
                pivot_owner[p] = e
                if reduced:
                    stored[e] = col
                if death > v:
                    births.append(v)
                    deaths.append(death)
                break
            owner = pivot_owner[p]
            if owner in stored:
                other = stored[owner]
            else:
                other, _ = _cofacets(R, iu[owner], ju[owner], vals[owner], max_radius)
            col = _xor_sorted(col, other)
            reduced = True
        # a column reduced to zero is an essential class and is not reported
    return np.array(births, dtype=np.float64), np.array(deaths, dtype=np.float64)


def compute_diagram(cloud, degree: int, max_radius: Optional[float] = None, **kwargs) -> PersistenceDiagram:
    if degree == 0:
        return compute_h0(cloud, max_radius)
    if degree == 1:
        return compute_h1(cloud, max_radius, **kwargs)
    raise ValueError("degree must be 0 or 1")


def subsample_maxmin(cloud: PointCloud, m: int, seed: int = 0) -> PointCloud:
    """Greedy farthest-point subsample of ``m`` points.

    The first point is drawn with ``seed``; each next point maximizes the
    distance to those already picked (first index wins ties).
    """
    pts = cloud.points
    n = pts.shape[0]
    if not 1 <= m <= n:
        raise ValueError(f"m must be in [1, {n}], got {m}")
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(n))]
    dist = np.linalg.norm(pts - pts[chosen[0]], axis=1)
    for _ in range(m - 1):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(pts - pts[nxt], axis=1))
    return PointCloud(cloud.id, pts[chosen], cloud.label)


# --- on-disk cache -----------------------------------------------------------

def diagram_record(cloud_id: str, diagram: PersistenceDiagram, max_radius: float, **meta) -> dict:
    rec = {
        "id": cloud_id,
        "degree": int(diagram.degree),
        "points": diagram.points.tolist(),
        "max_radius": float(max_radius),
    }
    rec.update(meta)
    return rec


def write_cache(path, records: Iterable[dict]) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_cache(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        return []
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                rec["diagram"] = PersistenceDiagram(int(rec["degree"]), rec["points"])
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad cache record ({exc})") from exc
            out.append(rec)
    return out


def cache_lookup(records: Sequence[dict], cloud_id: str, degree: int, max_radius: float) -> Optional[PersistenceDiagram]:
    for rec in records:
        if rec["id"] == cloud_id and rec["degree"] == degree and rec["max_radius"] == max_radius:
            return rec["diagram"]
    return None
