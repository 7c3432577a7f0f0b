"""
Labelled pools of point clouds.

Pools come from the linked twist map generator (:func:`gen_orbit`) or from
disk: JSON Lines (one cloud per line) or a directory of XYZ files.

Randomness uses numpy's PCG64 bit generator. Cloud ``m`` of a pool draws
from ``SeedSequence([seed, m])``, so a pool is reproducible from its seed
and any single cloud can be regenerated on its own.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .persistence import PointCloud

R_MIN = 2.0
R_MAX = 4.3


class PoolFormatError(ValueError):
    """A pool file could not be parsed."""


@dataclass(frozen=True)
class Pool:
    clouds: tuple
    provenance: str = "file"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        clouds = tuple(self.clouds)
        if not clouds:
            raise ValueError("empty pool")
        ids = [c.id for c in clouds]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate cloud ids: {dup[:5]}")
        if any(c.label is None for c in clouds):
            raise ValueError("every cloud in a pool needs a label")
        object.__setattr__(self, "clouds", clouds)

    def __len__(self) -> int:
        return len(self.clouds)

    @property
    def ids(self) -> list[str]:
        return [c.id for c in self.clouds]

    @property
    def labels(self) -> np.ndarray:
        return np.array([c.label for c in self.clouds], dtype=float)


def _rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, index])))


def orbit_points(x0: float, y0: float, r: float, n_points: int) -> np.ndarray:
    """Iterate the linked twist map from (x0, y0); the start is the first point."""
    pts = np.empty((n_points, 2))
    x, y = x0, y0
    for n in range(n_points):
        pts[n] = x, y
        x = (x + r * y * (1 - y)) % 1.0
        y = (y + r * x * (1 - x)) % 1.0
    return pts


def gen_orbit(
    M: int = 1000,
    N: int = 1000,
    r_min: float = R_MIN,
    r_max: float = R_MAX,
    seed: int = 0,
    shared_start: bool = False,
) -> Pool:
    """Pool of ``M`` orbit clouds with ``N`` points each, labelled by ``r``.

    Each cloud draws its own start in the unit square unless
    ``shared_start`` is set, in which case one start (drawn from the pool
    seed) is used for every cloud.
    """
    if M < 1 or N < 1:
        raise ValueError("M and N must be at least 1")
    if not r_min < r_max:
        raise ValueError("need r_min < r_max")
    starts = np.empty((M, 2))
    rs = np.empty(M)
    if shared_start:
        common = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed]))).random(2)
    for m in range(M):
        rng = _rng(seed, m)
        start = rng.random(2)
        starts[m] = common if shared_start else start
        rs[m] = rng.uniform(r_min, r_max)

    # iterate all clouds at once; same arithmetic as orbit_points
    pts = np.empty((M, N, 2))
    x, y = starts[:, 0].copy(), starts[:, 1].copy()
    for n in range(N):
        pts[:, n, 0] = x
        pts[:, n, 1] = y
        x = (x + rs * y * (1 - y)) % 1.0
        y = (y + rs * x * (1 - x)) % 1.0

    width = len(str(M - 1))
    clouds = tuple(
        PointCloud(f"orbit-{m:0{width}d}", pts[m], float(rs[m])) for m in range(M)
    )
    params = dict(M=M, N=N, r_min=r_min, r_max=r_max, seed=seed, shared_start=shared_start)
    return Pool(clouds, "orbit", params)


def save_jsonl(pool: Pool, path) -> None:
    with open(path, "w") as fh:
        for c in pool.clouds:
            rec = {"id": c.id, "points": c.points.tolist(), "y": c.label}
            fh.write(json.dumps(rec) + "\n")


def load_jsonl(path) -> Pool:
    path = Path(path)
    clouds = []
    seen = set()
    dim = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                cloud = PointCloud(str(rec["id"]), np.asarray(rec["points"], dtype=float), float(rec["y"]))
            except (ValueError, KeyError, TypeError) as exc:
                raise PoolFormatError(f"{path}:{lineno}: {exc}") from exc
            if cloud.id in seen:
                raise ValueError(f"{path}:{lineno}: duplicate id {cloud.id!r}")
            seen.add(cloud.id)
            if dim is None:
                dim = cloud.dim
            elif cloud.dim != dim:
                raise ValueError(
                    f"{path}:{lineno}: dimension mismatch ({cloud.dim}-d cloud in a {dim}-d pool)"
                )
            clouds.append(cloud)
    if not clouds:
        raise ValueError("empty pool")
    return Pool(tuple(clouds), "file", {"path": str(path)})


def read_xyz(path) -> PointCloud:
    """One XYZ molecule; the comment line must contain ``y=<value>``."""
    path = Path(path)
    lines = path.read_text().splitlines()
    if len(lines) < 2:
        raise PoolFormatError(f"{path}: truncated header")
    try:
        count = int(lines[0].split()[0])
    except (ValueError, IndexError) as exc:
        raise PoolFormatError(f"{path}:1: atom count expected") from exc
    label = None
    for tok in lines[1].replace(",", " ").split():
        if tok.startswith("y="):
            try:
                label = float(tok[2:])
            except ValueError as exc:
                raise PoolFormatError(f"{path}:2: bad label {tok!r}") from exc
    if label is None:
        raise PoolFormatError(f"{path}:2: comment line lacks y=<value>")
    rows = [ln for ln in lines[2:] if ln.strip()]
    if len(rows) != count:
        raise PoolFormatError(f"{path}: header declares {count} atoms, found {len(rows)}")
    coords = []
    for k, row in enumerate(rows, 3):
        parts = row.split()
        if len(parts) < 4:
            raise PoolFormatError(f"{path}:{k}: expected 'element x y z'")
        try:
            coords.append([float(v) for v in parts[1:4]])
        except ValueError as exc:
            raise PoolFormatError(f"{path}:{k}: bad coordinates") from exc
    return PointCloud(path.stem, np.array(coords), label)


def write_xyz(cloud: PointCloud, path, elements: Sequence[str] | None = None) -> None:
    elements = elements or ["X"] * cloud.n_points
    out = [str(cloud.n_points), f"y={cloud.label!r}"]
    out += [f"{el} {x:.10f} {y:.10f} {z:.10f}" for el, (x, y, z) in zip(elements, cloud.points)]
    Path(path).write_text("\n".join(out) + "\n")


def load_xyz_dir(path) -> Pool:
    path = Path(path)
    files = sorted(path.glob("*.xyz"))
    if not files:
        raise ValueError("empty pool")
    return Pool(tuple(read_xyz(f) for f in files), "file", {"path": str(path)})
