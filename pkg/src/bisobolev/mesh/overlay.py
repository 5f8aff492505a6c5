"""Common refinement of two triangulations by convex clipping."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from ..errors import OverlayDegenerate
from .triangulation import Triangulation, triangle_areas

SLIVER_RTOL = 1e-14


@dataclass(frozen=True, eq=False)
class Overlay:
    """Cells of t1 ∩ t2 fanned into triangles.

    Triangles are not stitched into a conforming mesh; each carries the pair
    of parent triangles it lies in. ``discarded_area`` is the total area of
    sliver cells dropped below ``SLIVER_RTOL * area``.
    """

    vertices: np.ndarray      # (k, 3, 2) triangle corner coordinates
    parent1: np.ndarray
    parent2: np.ndarray
    discarded_area: float

    @property
    def areas(self) -> np.ndarray:
        v = self.vertices
        return 0.5 * ((v[:, 1, 0] - v[:, 0, 0]) * (v[:, 2, 1] - v[:, 0, 1])
                      - (v[:, 1, 1] - v[:, 0, 1]) * (v[:, 2, 0] - v[:, 0, 0]))

    @property
    def area(self) -> float:
        return math.fsum(self.areas)

    def __len__(self) -> int:
        return len(self.parent1)

    def as_triangulation(self) -> Triangulation:
        """Triangle soup as a Triangulation (vertices duplicated, no orientation checks)."""
        v = self.vertices.reshape(-1, 2)
        t = np.arange(len(v)).reshape(-1, 3)
        return Triangulation(v, t, self.parent1, check=False)


def candidate_pairs(t1: Triangulation, t2: Triangulation) -> tuple[np.ndarray, np.ndarray]:
    """Pairs (i, j) whose bounding boxes overlap, via t2's location grid."""
    lo, cell, nx, ny, offsets, tris = t2._grid
    tv = t1.vertices[t1.triangles]
    bmin = np.floor((tv.min(axis=1) - lo) / cell).astype(np.int64)
    bmax = np.floor((tv.max(axis=1) - lo) / cell).astype(np.int64)
    bmin = np.clip(bmin, 0, [nx - 1, ny - 1])
    bmax = np.clip(bmax, 0, [nx - 1, ny - 1])
    wx = bmax[:, 0] - bmin[:, 0] + 1
    wy = bmax[:, 1] - bmin[:, 1] + 1
    cnt = wx * wy
    ids = np.repeat(np.arange(len(t1)), cnt)
    start = np.repeat(np.cumsum(cnt) - cnt, cnt)
    local = np.arange(len(ids)) - start
    cx = bmin[ids, 0] + local % wx[ids]
    cy = bmin[ids, 1] + local // wx[ids]
    cid = cx * ny + cy
    n_in = offsets[cid + 1] - offsets[cid]
    i_rep = np.repeat(ids, n_in)
    base = np.repeat(offsets[cid], n_in)
    loc = np.arange(len(i_rep)) - np.repeat(np.cumsum(n_in) - n_in, n_in)
    j_rep = tris[base + loc]
    if len(i_rep) == 0:
        return i_rep, j_rep
    key = np.unique(i_rep * len(t2) + j_rep)
    i, j = key // len(t2), key % len(t2)
    # exact bbox overlap filter
    a = t1.vertices[t1.triangles[i]]
    b = t2.vertices[t2.triangles[j]]
    ok = np.all(a.min(axis=1) <= b.max(axis=1), axis=1) & np.all(b.min(axis=1) <= a.max(axis=1), axis=1)
    return i[ok], j[ok]


def clip_triangles(subject: np.ndarray, clip: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sutherland-Hodgman of triangles ``subject[k]`` by ccw triangles ``clip[k]``.

    Returns padded polygons (k, 9, 2) and vertex counts (k,).
    """
    k = len(subject)
    maxv = 9
    poly = np.zeros((k, maxv, 2))
    poly[:, :3] = subject
    count = np.full(k, 3, dtype=np.int64)
    rows = np.arange(k)
    for e in range(3):
        a = clip[:, e]
        b = clip[:, (e + 1) % 3]
        d = b - a
        # signed distance (unnormalised) of each polygon vertex to line a->b, inside >= 0
        s = d[:, None, 0] * (poly[:, :, 1] - a[:, None, 1]) - d[:, None, 1] * (poly[:, :, 0] - a[:, None, 0])
        idx = np.arange(maxv)[None, :]
        valid = idx < count[:, None]
        nxt = np.where(idx + 1 < count[:, None], idx + 1, 0)
        s_next = np.take_along_axis(s, nxt, axis=1)
        p_next = np.take_along_axis(poly, nxt[:, :, None], axis=1)
        inside = s >= 0
        inside_next = s_next >= 0
        cross = valid & (inside != inside_next)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = s / (s - s_next)
            inter = poly + t[:, :, None] * (p_next - poly)
        # candidate outputs: per edge [vertex if inside, intersection if crossing]
        cand = np.stack([poly, inter], axis=2).reshape(k, 2 * maxv, 2)
        keep = np.stack([valid & inside, cross], axis=2).reshape(k, 2 * maxv)
        new_count = keep.sum(axis=1)
        if new_count.max(initial=0) > maxv:  # cannot happen for triangle-triangle clipping
            raise RuntimeError("clipping produced too many vertices")
        order = np.argsort(~keep, axis=1, kind="stable")
        cand = np.take_along_axis(cand, order[:, :, None], axis=1)[:, :maxv]
        poly = np.where((np.arange(maxv)[None, :] < new_count[:, None])[:, :, None], cand, 0.0)
        count = new_count
    return poly, count


def overlay(t1: Triangulation, t2: Triangulation, *, domain_area: float | None = None,
            chunk: int = 200_000) -> Overlay:
    """Common refinement of ``t1`` and ``t2`` (which should cover the same polygon)."""
    if domain_area is None:
        domain_area = max(t1.area, t2.area)
    thresh = SLIVER_RTOL * domain_area
    i_all, j_all = candidate_pairs(t1, t2)
    tris_out, p1_out, p2_out = [], [], []
    discarded = []
    for s in range(0, len(i_all), chunk):
        i = i_all[s:s + chunk]
        j = j_all[s:s + chunk]
        subj = t1.vertices[t1.triangles[i]]
        clp = t2.vertices[t2.triangles[j]]
        poly, count = clip_triangles(subj, clp)
        for m in range(3, 10):
            sel = np.flatnonzero(count == m)
            if len(sel) == 0:
                continue
            P = poly[sel, :m]
            for f in range(1, m - 1):
                tri = np.stack([P[:, 0], P[:, f], P[:, f + 1]], axis=1)
                ar = 0.5 * ((tri[:, 1, 0] - tri[:, 0, 0]) * (tri[:, 2, 1] - tri[:, 0, 1])
                            - (tri[:, 1, 1] - tri[:, 0, 1]) * (tri[:, 2, 0] - tri[:, 0, 0]))
                good = ar > thresh
                sliver = (~good) & (ar > 0)
                if np.any(sliver):
                    discarded.append(ar[sliver])
                tris_out.append(tri[good])
                p1_out.append(i[sel[good]])
                p2_out.append(j[sel[good]])
    if tris_out:
        verts = np.concatenate(tris_out)
        p1 = np.concatenate(p1_out)
        p2 = np.concatenate(p2_out)
    else:
        verts = np.zeros((0, 3, 2))
        p1 = p2 = np.zeros(0, dtype=np.int64)
    order = np.lexsort((p2, p1), axis=0) if len(p1) else np.zeros(0, dtype=np.int64)
    verts, p1, p2 = verts[order], p1[order], p2[order]
    disc = math.fsum(np.concatenate(discarded)) if discarded else 0.0
    # dropped area at rounding level is expected along shared edges; report real loss only
    if disc > 100 * thresh:
        warnings.warn(OverlayDegenerate(f"discarded sliver area {disc:.3e}"), stacklevel=2)
    return Overlay(verts, p1, p2, disc)


def refine_by_cells(mesh: Triangulation, cells: Triangulation | None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pieces of ``mesh`` on which a map smooth on ``cells`` is smooth.

    Returns (corner coordinates (k,3,2), mesh parent ids, cell parent ids);
    cell ids are -1 when ``cells`` is None.
    """
    if cells is None:
        tv = mesh.vertices[mesh.triangles]
        ids = np.arange(len(mesh))
        return tv, ids, np.full(len(mesh), -1, dtype=np.int64)
    ov = overlay(mesh, cells)
    return ov.vertices, ov.parent1, ov.parent2


__all__ = ["Overlay", "overlay", "candidate_pairs", "clip_triangles", "refine_by_cells", "triangle_areas"]
