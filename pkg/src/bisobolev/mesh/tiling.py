"""r-tilings: lattice squares whose threefold enlargement sits strictly inside the domain."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from ..errors import EmptyTiling
from .geometry import Polygon, Square


@dataclass(frozen=True, eq=False)
class Tiling:
    r: float
    keys: np.ndarray          # (n, 2) integer lattice indices; center = keys * r
    uncovered_area: float

    @property
    def squares(self) -> list[Square]:
        r = self.r
        return [Square((float(kx * r), float(ky * r)), r) for kx, ky in self.keys]

    @property
    def centers(self) -> np.ndarray:
        return self.keys.astype(float) * self.r

    def __len__(self) -> int:
        return len(self.keys)

    def index_of(self) -> dict[tuple[int, int], int]:
        return {(int(a), int(b)): i for i, (a, b) in enumerate(self.keys)}


def _gap_disjoint_float(centers, half, a, b, tol):
    """Per center: +1 box certainly misses segment, -1 certainly meets it, 0 undecided."""
    x0 = centers[:, 0] - half
    x1 = centers[:, 0] + half
    y0 = centers[:, 1] - half
    y1 = centers[:, 1] + half
    gx = np.maximum(x0 - max(a[0], b[0]), min(a[0], b[0]) - x1)
    gy = np.maximum(y0 - max(a[1], b[1]), min(a[1], b[1]) - y1)
    nx, ny = -(b[1] - a[1]), b[0] - a[0]
    nlen = math.hypot(nx, ny)
    s0 = (nx * a[0] + ny * a[1]) / nlen
    px = np.stack([x0, x1]) * nx / nlen
    py = np.stack([y0, y1]) * ny / nlen
    lo = px.min(axis=0) + py.min(axis=0)
    hi = px.max(axis=0) + py.max(axis=0)
    gn = np.maximum(lo - s0, s0 - hi)
    gap = np.maximum(np.maximum(gx, gy), gn)
    out = np.zeros(len(centers), dtype=np.int8)
    out[gap > tol] = 1
    out[gap < -tol] = -1
    return out


def _box_meets_segment_exact(cx, cy, half, a, b) -> bool:
    x0, x1, y0, y1 = cx - half, cx + half, cy - half, cy + half
    ax, ay, bx, by = (Fraction(float(v)) for v in (a[0], a[1], b[0], b[1]))
    if x0 > max(ax, bx) or min(ax, bx) > x1 or y0 > max(ay, by) or min(ay, by) > y1:
        return False
    nx, ny = -(by - ay), bx - ax
    s0 = nx * ax + ny * ay
    proj = [nx * x + ny * y for x in (x0, x1) for y in (y0, y1)]
    return not (min(proj) > s0 or max(proj) < s0)


def r_tiling(domain: Polygon, r: float) -> Tiling:
    """All squares Q_r(k r) with Q_3r(k r) compactly contained in ``domain``.

    Closed Q_3r is inside the open domain iff its center is inside and no
    boundary edge touches it; the edge test is exact (rational arithmetic
    behind a float filter).
    """
    if not r > 0:
        raise ValueError("r must be positive")
    xmin, ymin, xmax, ymax = domain.bbox
    kx = np.arange(math.ceil(xmin / r), math.floor(xmax / r) + 1)
    ky = np.arange(math.ceil(ymin / r), math.floor(ymax / r) + 1)
    if len(kx) == 0 or len(ky) == 0:
        keys = np.zeros((0, 2), dtype=np.int64)
    else:
        KX, KY = np.meshgrid(kx, ky, indexing="ij")
        keys = np.stack([KX.ravel(), KY.ravel()], axis=1).astype(np.int64)
    centers = keys.astype(float) * r
    half = 1.5 * r
    tol = 1e-9 * max(domain.diameter, r)
    ok = np.ones(len(keys), dtype=bool)
    rq = Fraction(r)
    half_q = Fraction(3, 2) * rq
    starts, ends = domain.edges()
    for a, b in zip(starts, ends):
        idx = np.flatnonzero(ok)
        if len(idx) == 0:
            break
        status = _gap_disjoint_float(centers[idx], half, a, b, tol)
        ok[idx[status == -1]] = False
        for i in idx[status == 0]:
            cx = int(keys[i, 0]) * rq
            cy = int(keys[i, 1]) * rq
            if _box_meets_segment_exact(cx, cy, half_q, a, b):
                ok[i] = False
    idx = np.flatnonzero(ok)
    if len(idx):
        inside = domain.contains_points(centers[idx])
        ok[idx[~inside]] = False
    keys = keys[ok]
    # ordering: row-major by (y, x) so that indices read like a raster
    order = np.lexsort((keys[:, 0], keys[:, 1])) if len(keys) else np.zeros(0, dtype=np.int64)
    keys = keys[order]
    keys.setflags(write=False)
    uncovered = domain.area - len(keys) * r * r
    if len(keys) == 0:
        warnings.warn(EmptyTiling(f"no square of side {r} fits (3r containment)"), stacklevel=2)
    return Tiling(r=float(r), keys=keys, uncovered_area=float(uncovered))


def square_of(tiling: Tiling, i: int) -> Square:
    kx, ky = tiling.keys[i]
    return Square((float(kx * tiling.r), float(ky * tiling.r)), tiling.r)
