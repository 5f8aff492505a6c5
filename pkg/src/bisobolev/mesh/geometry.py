"""Polygonal domains and axis-aligned squares."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidPolygon
from .predicates import find_segment_crossings


def signed_area(loop) -> float:
    p = np.asarray(loop, dtype=float)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * math.fsum(np.concatenate([x * np.roll(y, -1), -np.roll(x, -1) * y]))


def _loop_edges(loop: np.ndarray):
    return loop, np.roll(loop, -1, axis=0)


@dataclass(frozen=True, eq=False)
class Polygon:
    """Outer loop plus holes. Loops are re-oriented on construction: outer ccw, holes cw."""

    outer: np.ndarray
    holes: tuple = field(default=())

    def __post_init__(self):
        outer = np.array(self.outer, dtype=float).reshape(-1, 2)
        if len(outer) >= 2 and np.array_equal(outer[0], outer[-1]):
            outer = outer[:-1]
        if len(outer) < 3:
            raise InvalidPolygon("outer loop needs at least 3 vertices")
        if signed_area(outer) < 0:
            outer = outer[::-1].copy()
        holes = []
        for h in self.holes:
            h = np.array(h, dtype=float).reshape(-1, 2)
            if len(h) >= 2 and np.array_equal(h[0], h[-1]):
                h = h[:-1]
            if len(h) < 3:
                raise InvalidPolygon("hole loop needs at least 3 vertices")
            if signed_area(h) > 0:
                h = h[::-1].copy()
            holes.append(h)
        outer.setflags(write=False)
        for h in holes:
            h.setflags(write=False)
        object.__setattr__(self, "outer", outer)
        object.__setattr__(self, "holes", tuple(holes))
        self._check_simple()
        if self.area <= 0:
            raise InvalidPolygon("polygon area must be positive")

    @property
    def loops(self) -> tuple:
        return (self.outer,) + self.holes

    @property
    def area(self) -> float:
        return math.fsum([signed_area(loop) for loop in self.loops])

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        return (float(self.outer[:, 0].min()), float(self.outer[:, 1].min()),
                float(self.outer[:, 0].max()), float(self.outer[:, 1].max()))

    @property
    def diameter(self) -> float:
        x0, y0, x1, y1 = self.bbox
        return math.hypot(x1 - x0, y1 - y0)

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """All boundary edges as (starts, ends) arrays of shape (n, 2)."""
        a, b = zip(*(_loop_edges(loop) for loop in self.loops))
        return np.concatenate(a), np.concatenate(b)

    def _check_simple(self):
        starts, ends = self.edges()
        ids = []
        offset = 0
        for loop in self.loops:
            n = len(loop)
            ids.append(np.stack([offset + np.arange(n), offset + (np.arange(n) + 1) % n], axis=1))
            offset += n
        ids = np.concatenate(ids)
        bad = find_segment_crossings(starts, ends, ids[:, 0], ids[:, 1], max_report=1)
        if bad:
            raise InvalidPolygon(f"polygon loops are not simple / cross each other (edges {bad[0]})")

    def contains_points(self, pts) -> np.ndarray:
        """Even-odd test over all loops; points exactly on the boundary are unreliable."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        inside = np.zeros(len(pts), dtype=bool)
        x, y = pts[:, 0], pts[:, 1]
        for loop in self.loops:
            a, b = _loop_edges(loop)
            for (ax, ay), (bx, by) in zip(a, b):
                cond = (ay > y) != (by > y)
                with np.errstate(divide="ignore", invalid="ignore"):
                    xint = ax + (y - ay) * (bx - ax) / (by - ay)
                inside ^= cond & (x < xint)
        return inside

    def boundary_distance(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        starts, ends = self.edges()
        best = np.full(len(pts), np.inf)
        for a, b in zip(starts, ends):
            best = np.minimum(best, point_segment_distance(pts, a, b))
        return best

    def interior_point(self) -> np.ndarray:
        """Some point strictly inside (used for hole seeds)."""
        import triangle as tr

        loop = self.outer
        n = len(loop)
        segs = np.stack([np.arange(n), (np.arange(n) + 1) % n], axis=1)
        out = tr.triangulate({"vertices": np.array(loop), "segments": segs}, "pQ")
        tris = out["triangles"]
        v = out["vertices"]
        areas = np.abs(_tri_areas(v, tris))
        k = int(np.argmax(areas))
        c = v[tris[k]].mean(axis=0)
        if self.holes and not self.contains_points(c[None])[0]:
            raise InvalidPolygon("could not find an interior point")
        return c


def _tri_areas(v, t):
    p0, p1, p2 = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    return 0.5 * ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
                  - (p1[:, 1] - p0[:, 1]) * (p2[:, 0] - p0[:, 0]))


def point_segment_distance(pts: np.ndarray, a, b) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = b - a
    L2 = float(d @ d)
    if L2 == 0:
        return np.hypot(pts[:, 0] - a[0], pts[:, 1] - a[1])
    t = np.clip(((pts - a) @ d) / L2, 0.0, 1.0)
    proj = a + t[:, None] * d
    return np.hypot(pts[:, 0] - proj[:, 0], pts[:, 1] - proj[:, 1])


@dataclass(frozen=True)
class Square:
    """Axis-aligned square Q_side(center)."""

    center: tuple[float, float]
    side: float

    def __post_init__(self):
        if not self.side > 0:
            raise ValueError("square side must be positive")

    @property
    def corners(self) -> np.ndarray:
        """Counter-clockwise from the lower-left corner."""
        cx, cy = self.center
        h = 0.5 * self.side
        return np.array([[cx - h, cy - h], [cx + h, cy - h], [cx + h, cy + h], [cx - h, cy + h]])

    def scaled(self, factor: float) -> "Square":
        return Square(self.center, self.side * factor)

    @property
    def area(self) -> float:
        return self.side * self.side

    def as_polygon(self) -> Polygon:
        return Polygon(self.corners)


# ---------------------------------------------------------------------------
# named domains


def rectangle(x0, y0, x1, y1) -> Polygon:
    return Polygon([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])


def unit_square() -> Polygon:
    return rectangle(0.0, 0.0, 1.0, 1.0)


def centered_square(half: float = 0.5) -> Polygon:
    return rectangle(-half, -half, half, half)


def square_with_hole() -> Polygon:
    hole = [[0.375, 0.375], [0.375, 0.625], [0.625, 0.625], [0.625, 0.375]]
    return Polygon(unit_square().outer, (hole,))


def l_shape() -> Polygon:
    return Polygon([[0, 0], [1, 0], [1, 0.5], [0.5, 0.5], [0.5, 1], [0, 1]])


NAMED_DOMAINS = {
    "unit-square": unit_square,
    "centered-square": centered_square,
    "square-with-hole": square_with_hole,
    "l-shape": l_shape,
}


def parse_domain(spec: str) -> Polygon:
    """``unit-square``, ``centered-square``, ``square-with-hole``, ``l-shape``,
    ``rect:x0,y0,x1,y1`` or ``poly:x,y;x,y;...``."""
    spec = spec.strip()
    if spec in NAMED_DOMAINS:
        return NAMED_DOMAINS[spec]()
    kind, _, rest = spec.partition(":")
    try:
        if kind == "rect":
            x0, y0, x1, y1 = (float(v) for v in rest.split(","))
            return rectangle(x0, y0, x1, y1)
        if kind == "poly":
            pts = [[float(c) for c in p.split(",")] for p in rest.split(";") if p.strip()]
            return Polygon(pts)
    except ValueError as exc:
        raise InvalidPolygon(f"cannot parse domain {spec!r}: {exc}") from None
    raise InvalidPolygon(f"unknown domain {spec!r}; known: {', '.join(NAMED_DOMAINS)}, rect:, poly:")
