"""Conforming triangulations, point location and the tile-respecting mesher."""
from __future__ import annotations

import enum
import math
from bisect import bisect_left, bisect_right
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import triangle as _triangle

from ..errors import TriangulationFailed
from .geometry import Polygon, Square
from .predicates import find_segment_crossings, orient_sign, triangle_signs
from .tiling import Tiling


class Diagonal(str, enum.Enum):
    """Which diagonal splits a square: lower-left/upper-right or upper-left/lower-right."""

    LL_UR = "ll-ur"
    UL_LR = "ul-lr"

    def triangles(self) -> tuple[tuple[int, int, int], tuple[int, int, int]]:
        """Corner indices (ccw from lower-left: 0 LL, 1 LR, 2 UR, 3 UL) of the two halves."""
        if self is Diagonal.LL_UR:
            return (0, 1, 2), (0, 2, 3)
        return (0, 1, 3), (1, 2, 3)


def triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    v = vertices
    t = triangles
    p0, p1, p2 = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    return 0.5 * ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
                  - (p1[:, 1] - p0[:, 1]) * (p2[:, 0] - p0[:, 0]))


class Triangulation:
    """Triangle mesh of a polygonal region.

    ``tags[i]`` is the index of the tiling square triangle ``i`` came from,
    or -1 for triangles of the boundary strip. Construction checks that all
    triangles are positively oriented (exactly) and that every edge is shared
    by at most two consistently oriented triangles.
    """

    def __init__(self, vertices, triangles, tags=None, *, check: bool = True):
        v = np.array(vertices, dtype=float).reshape(-1, 2)
        t = np.array(triangles, dtype=np.int64).reshape(-1, 3)
        if len(t) and (t.min() < 0 or t.max() >= len(v)):
            raise TriangulationFailed("triangle references a missing vertex")
        tags = np.full(len(t), -1, dtype=np.int64) if tags is None else np.array(tags, dtype=np.int64)
        if tags.shape != (len(t),):
            raise ValueError("one tag per triangle required")
        for a in (v, t, tags):
            a.setflags(write=False)
        self.vertices = v
        self.triangles = t
        self.tags = tags
        if check:
            signs = triangle_signs(v, t)
            bad = np.flatnonzero(signs <= 0)
            if len(bad):
                raise TriangulationFailed(f"{len(bad)} triangles are not positively oriented (first {int(bad[0])})")
            self.adjacency  # edge-manifold check happens there

    def __len__(self) -> int:
        return len(self.triangles)

    def __repr__(self) -> str:
        return f"Triangulation({len(self.vertices)} vertices, {len(self.triangles)} triangles)"

    @cached_property
    def areas(self) -> np.ndarray:
        a = triangle_areas(self.vertices, self.triangles)
        a.setflags(write=False)
        return a

    @property
    def area(self) -> float:
        return math.fsum(self.areas)

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    @cached_property
    def adjacency(self) -> np.ndarray:
        """adjacency[i, k]: triangle across the edge opposite local vertex k (-1 on the boundary)."""
        t = self.triangles
        m = len(t)
        adj = np.full((m, 3), -1, dtype=np.int64)
        if m == 0:
            return adj
        a = np.concatenate([t[:, 1], t[:, 2], t[:, 0]])
        b = np.concatenate([t[:, 2], t[:, 0], t[:, 1]])
        tri = np.tile(np.arange(m), 3)
        loc = np.repeat(np.arange(3), m)
        n = len(self.vertices)
        key = a * n + b
        rkey = b * n + a
        order = np.argsort(key, kind="stable")
        skey = key[order]
        if np.any(skey[1:] == skey[:-1]):
            raise TriangulationFailed("a directed edge is used twice (inconsistent orientation or overlap)")
        pos = np.searchsorted(skey, rkey)
        pos = np.minimum(pos, len(skey) - 1)
        hit = skey[pos] == rkey
        adj[tri[hit], loc[hit]] = tri[order[pos[hit]]]
        adj.setflags(write=False)
        return adj

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        """Directed boundary edges (a, b) with the mesh on their left."""
        t = self.triangles
        adj = self.adjacency
        out = []
        for k in range(3):
            sel = adj[:, k] < 0
            out.append(np.stack([t[sel, (k + 1) % 3], t[sel, (k + 2) % 3]], axis=1))
        e = np.concatenate(out) if out else np.zeros((0, 2), dtype=np.int64)
        order = np.lexsort((e[:, 1], e[:, 0]))
        return e[order]

    @cached_property
    def boundary(self) -> list[np.ndarray]:
        """Boundary loops of vertex indices: outer (ccw) first, then holes (cw)."""
        nxt = defaultdict(list)
        for a, b in self.boundary_edges:
            nxt[int(a)].append(int(b))
        used = set()
        loops = []
        for a, b in self.boundary_edges:
            a, b = int(a), int(b)
            if (a, b) in used:
                continue
            loop = [a]
            cur_a, cur_b = a, b
            while True:
                used.add((cur_a, cur_b))
                if cur_b == a:
                    break
                loop.append(cur_b)
                cands = [c for c in nxt[cur_b] if (cur_b, c) not in used]
                if not cands:
                    break
                cur_a, cur_b = cur_b, cands[0]
            loops.append(np.array(loop, dtype=np.int64))
        v = self.vertices
        areas = [_loop_area(v[l]) for l in loops]
        order = sorted(range(len(loops)), key=lambda i: (-areas[i], int(loops[i].min())))
        return [loops[i] for i in order]

    def boundary_vertex_ids(self) -> np.ndarray:
        return np.unique(self.boundary_edges.ravel())

    def boundary_is_simple(self, vertices=None) -> bool:
        """Boundary loops (placed at ``vertices``) are simple, mutually disjoint, and
        keep the orientation they have in this mesh."""
        v = self.vertices if vertices is None else np.asarray(vertices, dtype=float)
        e = self.boundary_edges
        if len(e) == 0:
            return True
        counts = np.bincount(e[:, 0], minlength=len(v))
        if np.any(counts > 1):
            return False
        if find_segment_crossings(v[e[:, 0]], v[e[:, 1]], e[:, 0], e[:, 1], max_report=1):
            return False
        for loop in self.boundary:
            if np.sign(_loop_area(v[loop])) != np.sign(_loop_area(self.vertices[loop])):
                return False
        return True

    # -- point location ---------------------------------------------------

    @cached_property
    def _grid(self):
        v = self.vertices
        t = self.triangles
        lo = v.min(axis=0)
        hi = v.max(axis=0)
        span = np.maximum(hi - lo, 1e-300)
        m = max(len(t), 1)
        # about one triangle per bucket keeps the candidate lists short
        cell = 0.5 * math.sqrt(span[0] * span[1] / m) if span[0] > 0 and span[1] > 0 else float(span.max())
        cell = max(cell, float(span.max()) / 2048)
        nx = int(span[0] // cell) + 1
        ny = int(span[1] // cell) + 1
        tv = v[t]
        bmin = np.floor((tv.min(axis=1) - lo) / cell).astype(np.int64)
        bmax = np.floor((tv.max(axis=1) - lo) / cell).astype(np.int64)
        bmin = np.clip(bmin, 0, [nx - 1, ny - 1])
        bmax = np.clip(bmax, 0, [nx - 1, ny - 1])
        wx = bmax[:, 0] - bmin[:, 0] + 1
        wy = bmax[:, 1] - bmin[:, 1] + 1
        cnt = wx * wy
        tri_ids = np.repeat(np.arange(len(t)), cnt)
        start = np.repeat(np.cumsum(cnt) - cnt, cnt)
        local = np.arange(len(tri_ids)) - start
        cx = bmin[tri_ids, 0] + local % wx[tri_ids]
        cy = bmin[tri_ids, 1] + local // wx[tri_ids]
        cell_ids = cx * ny + cy
        order = np.lexsort((tri_ids, cell_ids))
        cell_sorted = cell_ids[order]
        tri_sorted = tri_ids[order]
        offsets = np.searchsorted(cell_sorted, np.arange(nx * ny + 1))
        return lo, cell, nx, ny, offsets, tri_sorted

    def _cell_of(self, pts):
        lo, cell, nx, ny, _, _ = self._grid
        c = np.floor((pts - lo) / cell).astype(np.int64)
        outside = (c[:, 0] < 0) | (c[:, 1] < 0) | (c[:, 0] >= nx) | (c[:, 1] >= ny)
        # points exactly on the upper bbox edge
        c[:, 0] = np.clip(c[:, 0], 0, nx - 1)
        c[:, 1] = np.clip(c[:, 1], 0, ny - 1)
        return c[:, 0] * ny + c[:, 1], outside

    def locate(self, p) -> int | None:
        """Lowest-index triangle whose closed hull contains ``p`` (exact), or None."""
        p = np.asarray(p, dtype=float).reshape(1, 2)
        lo, cell, nx, ny, offsets, tris = self._grid
        cid, outside = self._cell_of(p)
        if outside[0]:
            hi = lo + cell * np.array([nx, ny])
            if np.any(p[0] < lo) or np.any(p[0] > hi):
                return None
        cid = int(cid[0])
        v = self.vertices
        for k in tris[offsets[cid]:offsets[cid + 1]]:
            a, b, c = v[self.triangles[k]]
            if (orient_sign(a, b, p[0]) >= 0 and orient_sign(b, c, p[0]) >= 0
                    and orient_sign(c, a, p[0]) >= 0):
                return int(k)
        return None

    def locate_many(self, pts, rtol: float = 1e-12) -> np.ndarray:
        """Vectorised location with a small barycentric slack; -1 means outside."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        lo, cell, nx, ny, offsets, tris = self._grid
        cid, outside = self._cell_of(pts)
        out = np.full(len(pts), -1, dtype=np.int64)
        start = offsets[cid]
        count = offsets[cid + 1] - start
        count[outside] = 0
        v = self.vertices
        t = self.triangles
        # unresolved points only; a point whose candidates run out stays at -1
        sel = np.flatnonzero(count > 0)
        j = 0
        while len(sel):
            k = tris[start[sel] + j]
            p = pts[sel]
            a, b, c = v[t[k, 0]], v[t[k, 1]], v[t[k, 2]]
            d = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
            l1 = ((b[:, 0] - p[:, 0]) * (c[:, 1] - p[:, 1]) - (b[:, 1] - p[:, 1]) * (c[:, 0] - p[:, 0])) / d
            l2 = ((c[:, 0] - p[:, 0]) * (a[:, 1] - p[:, 1]) - (c[:, 1] - p[:, 1]) * (a[:, 0] - p[:, 0])) / d
            l3 = 1.0 - l1 - l2
            hit = (l1 >= -rtol) & (l2 >= -rtol) & (l3 >= -rtol)
            out[sel[hit]] = k[hit]
            j += 1
            sel = sel[~hit]
            sel = sel[count[sel] > j]
        return out


def _loop_area(p: np.ndarray) -> float:
    x, y = p[:, 0], p[:, 1]
    return 0.5 * math.fsum(np.concatenate([x * np.roll(y, -1), -np.roll(x, -1) * y]))


# ---------------------------------------------------------------------------
# meshing


@dataclass(frozen=True)
class GradingParams:
    """Boundary-strip point density.

    Strip points sit on the lattice of spacing r/2 everywhere in the strip and
    on finer dyadic lattices (down to r/2**depth) near the domain boundary.
    """

    depth: int = 1
    min_boundary_gap: float = 0.3  # in units of the local spacing

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("grading depth must be >= 1")


@dataclass(frozen=True)
class StripBox:
    """Extra strip points of spacing r/2**level inside an axis-aligned box."""

    x0: float
    y0: float
    x1: float
    y1: float
    level: int


def _split_axis_segments(segs, vertex_key_rows):
    """Split axis-aligned lattice segments at every lattice vertex lying on them."""
    out = []
    rows, cols = vertex_key_rows
    for (x0, y0), (x1, y1) in segs:
        if y0 == y1:
            xs = rows[y0]
            lo, hi = min(x0, x1), max(x0, x1)
            pts = xs[bisect_left(xs, lo):bisect_right(xs, hi)]
            for a, b in zip(pts[:-1], pts[1:]):
                out.append(((a, y0), (b, y0)))
        else:
            ys = cols[x0]
            lo, hi = min(y0, y1), max(y0, y1)
            pts = ys[bisect_left(ys, lo):bisect_right(ys, hi)]
            for a, b in zip(pts[:-1], pts[1:]):
                out.append(((x0, a), (x0, b)))
    return out


def triangulate(domain: Polygon, tiling: Tiling, grading: GradingParams = GradingParams(), *,
                diagonals=None, refine=None, strip_boxes=()) -> Triangulation:
    """Conforming mesh of ``domain`` in which every tiling square is split by its diagonal.

    ``diagonals`` maps tile index -> :class:`Diagonal` (default LL_UR).
    ``refine`` maps tile index -> d, replacing that square by a uniform
    2**d x 2**d grid of sub-squares (each split by the parent's diagonal).
    ``strip_boxes`` adds finer strip points locally.
    """
    r = tiling.r
    diagonals = diagonals or {}
    refine = refine or {}
    max_ref = max(refine.values(), default=0)
    max_box = max((b.level for b in strip_boxes), default=0)
    R = max(grading.depth, max_ref + 1, max_box) + 1
    h = r / 2 ** R
    S = 2 ** R
    half_S = 2 ** (R - 1)

    # -- tile sub-squares in integer lattice units
    lattice_pts: dict[tuple[int, int], None] = {}
    sub_squares = []  # (x0, y0, side, tile_index, diagonal)
    for i, (kx, ky) in enumerate(tiling.keys):
        kx, ky = int(kx), int(ky)
        d = int(refine.get(i, 0))
        diag = Diagonal(diagonals.get(i, Diagonal.LL_UR))
        s = S // 2 ** d
        x0 = (2 * kx - 1) * half_S
        y0 = (2 * ky - 1) * half_S
        for a in range(2 ** d):
            for b in range(2 ** d):
                sx, sy = x0 + a * s, y0 + b * s
                sub_squares.append((sx, sy, s, i, diag))
                for c in ((sx, sy), (sx + s, sy), (sx + s, sy + s), (sx, sy + s)):
                    lattice_pts[c] = None

    rows = defaultdict(list)
    cols = defaultdict(list)
    for x, y in lattice_pts:
        rows[y].append(x)
        cols[x].append(y)
    for k in rows:
        rows[k].sort()
    for k in cols:
        cols[k].sort()
    axis_segs = set()
    diag_segs = []
    for sx, sy, s, _, diag in sub_squares:
        c = [(sx, sy), (sx + s, sy), (sx + s, sy + s), (sx, sy + s)]
        for j in range(4):
            a, b = c[j], c[(j + 1) % 4]
            axis_segs.add((min(a, b), max(a, b)))
        if diag is Diagonal.LL_UR:
            diag_segs.append((c[0], c[2]))
        else:
            diag_segs.append((c[1], c[3]))
    tile_segs = _split_axis_segments(sorted(axis_segs), (rows, cols))
    tile_segs = sorted(set(tile_segs)) + diag_segs

    # -- occupancy of closed tiles, for filtering strip points
    keyset = np.zeros((0, 2), dtype=np.int64) if len(tiling.keys) == 0 else tiling.keys
    if len(keyset):
        kmin = keyset.min(axis=0)
        kmax = keyset.max(axis=0)
        occ = np.zeros(tuple(kmax - kmin + 1), dtype=bool)
        occ[keyset[:, 0] - kmin[0], keyset[:, 1] - kmin[1]] = True

    def in_closed_tiles(ix, iy):
        if not len(keyset):
            return np.zeros(len(ix), dtype=bool)
        res = np.zeros(len(ix), dtype=bool)
        # tile k covers [(2k-1) half_S, (2k+1) half_S]
        klo_x = -((-(ix - half_S)) // S)
        khi_x = (ix + half_S) // S
        klo_y = -((-(iy - half_S)) // S)
        khi_y = (iy + half_S) // S
        for kx in (klo_x, khi_x):
            for ky in (klo_y, khi_y):
                ox = kx - kmin[0]
                oy = ky - kmin[1]
                ok = (ox >= 0) & (oy >= 0) & (ox < occ.shape[0]) & (oy < occ.shape[1])
                hit = np.zeros(len(ix), dtype=bool)
                hit[ok] = occ[ox[ok], oy[ok]]
                res |= hit
        return res

    # -- strip lattice points
    xmin, ymin, xmax, ymax = domain.bbox
    strip: dict[tuple[int, int], None] = {}

    def add_level(level, box=None, near=None):
        step = 2 ** (R - level)
        spacing = r / 2 ** level
        bx0, by0, bx1, by1 = box if box is not None else (xmin, ymin, xmax, ymax)
        ix = np.arange(math.floor(bx0 / (h * step)), math.ceil(bx1 / (h * step)) + 1) * step
        iy = np.arange(math.floor(by0 / (h * step)), math.ceil(by1 / (h * step)) + 1) * step
        if len(ix) == 0 or len(iy) == 0:
            return
        IX, IY = np.meshgrid(ix, iy, indexing="ij")
        IX = IX.ravel()
        IY = IY.ravel()
        keep = ~in_closed_tiles(IX, IY)
        IX, IY = IX[keep], IY[keep]
        pts = np.stack([IX * h, IY * h], axis=1)
        inside = domain.contains_points(pts)
        IX, IY, pts = IX[inside], IY[inside], pts[inside]
        dist = domain.boundary_distance(pts)
        keep = dist >= grading.min_boundary_gap * spacing
        if near is not None:
            keep &= dist < near
        for a, b in zip(IX[keep], IY[keep]):
            strip[(int(a), int(b))] = None

    add_level(1)
    for level in range(2, grading.depth + 1):
        add_level(level, near=1.5 * r / 2 ** (level - 1))
    for bx in strip_boxes:
        add_level(bx.level, box=(bx.x0, bx.y0, bx.x1, bx.y1))
    # grade the strip toward refined tiles so their fine edges do not meet coarse slivers
    for i, d in sorted(refine.items()):
        cx, cy = (float(v) * r for v in tiling.keys[i])
        for level in range(2, int(d) + 2):
            ext = 0.5 * r + 2 * r / 2 ** (level - 1)
            add_level(level, box=(cx - ext, cy - ext, cx + ext, cy + ext))
    for key in lattice_pts:
        strip.pop(key, None)

    # -- assemble vertices: tile lattice points, strip lattice points, boundary points
    keys = sorted(lattice_pts) + sorted(strip)
    index = {k: i for i, k in enumerate(keys)}
    verts = [(k[0] * h, k[1] * h) for k in keys]
    segments = [(index[a], index[b]) for a, b in tile_segs]

    spacing_b = r / 2 ** grading.depth
    for loop in domain.loops:
        loop_ids = []
        n = len(loop)
        for j in range(n):
            a = loop[j]
            b = loop[(j + 1) % n]
            L = math.hypot(b[0] - a[0], b[1] - a[1])
            m = max(1, math.ceil(L / spacing_b - 1e-9))
            for i in range(m):
                t = i / m
                loop_ids.append(len(verts))
                verts.append((a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t))
        for j in range(len(loop_ids)):
            segments.append((loop_ids[j], loop_ids[(j + 1) % len(loop_ids)]))

    verts = np.array(verts, dtype=float)
    holes = [Polygon(hl).interior_point() for hl in domain.holes]
    data = {"vertices": verts, "segments": np.array(segments, dtype=np.int32)}
    if holes:
        data["holes"] = np.array(holes)
    try:
        out = _triangle.triangulate(data, "pQ")
    except Exception as exc:  # pragma: no cover - library failure path
        raise TriangulationFailed(f"strip meshing failed: {exc}") from exc
    if len(out["vertices"]) != len(verts) or not np.array_equal(out["vertices"], verts):
        raise TriangulationFailed("mesher inserted or merged vertices; boundary strip too thin for this grading")
    tris = np.asarray(out["triangles"], dtype=np.int64)
    tags = _tile_tags(verts[tris].mean(axis=1), tiling)
    try:
        return Triangulation(verts, tris, tags)
    except TriangulationFailed as exc:
        raise TriangulationFailed(f"strip meshing produced an invalid mesh: {exc}") from exc


def _tile_tags(centroids: np.ndarray, tiling: Tiling) -> np.ndarray:
    tags = np.full(len(centroids), -1, dtype=np.int64)
    if len(tiling) == 0:
        return tags
    r = tiling.r
    k = np.rint(centroids / r).astype(np.int64)
    lookup = tiling.index_of()
    inside = np.all(np.abs(centroids - k * r) < 0.5 * r, axis=1)
    for i in np.flatnonzero(inside):
        tags[i] = lookup.get((int(k[i, 0]), int(k[i, 1])), -1)
    return tags


def mesh_polygon(domain: Polygon, max_area: float | None = None, points=()) -> Triangulation:
    """Quality triangulation of a polygon (for quadrature); deterministic.

    ``points`` are extra interior points forced to be mesh vertices.
    """
    verts = []
    segs = []
    for loop in domain.loops:
        base = len(verts)
        n = len(loop)
        verts.extend(map(tuple, loop))
        segs.extend((base + j, base + (j + 1) % n) for j in range(n))
    verts.extend(tuple(map(float, p)) for p in points)
    data = {"vertices": np.array(verts, dtype=float), "segments": np.array(segs, dtype=np.int32)}
    holes = [Polygon(hl).interior_point() for hl in domain.holes]
    if holes:
        data["holes"] = np.array(holes)
    opts = "pqQ"
    if max_area is not None:
        opts += f"a{max_area:.17g}"
    out = _triangle.triangulate(data, opts)
    return Triangulation(out["vertices"], out["triangles"])


def square_triangulation(square: Square, diagonal: Diagonal = Diagonal.LL_UR) -> Triangulation:
    return Triangulation(square.corners, diagonal.triangles())


def structured_grid(x0: float, y0: float, x1: float, y1: float, nx: int, ny: int,
                    diagonal: Diagonal = Diagonal.LL_UR) -> Triangulation:
    """nx x ny rectangle grid, each cell split by ``diagonal``."""
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    verts = np.stack([X.ravel(), Y.ravel()], axis=1)

    def vid(i, j):
        return i * (ny + 1) + j

    tris = []
    for i in range(nx):
        for j in range(ny):
            c = [vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)]
            for tri in diagonal.triangles():
                tris.append([c[k] for k in tri])
    return Triangulation(verts, tris)
