"""Exact orientation predicate.

A floating-point filter with Shewchuk's first-stage error bound decides almost
every case; whatever the filter cannot certify is recomputed exactly in
integer arithmetic (floats are dyadic rationals), so the sign is never wrong.
"""
from __future__ import annotations

import enum

import numpy as np

_EPS = 2.0 ** -53
_CCW_ERRBOUND = (3.0 + 16.0 * _EPS) * _EPS


class Orientation(enum.IntEnum):
    NEGATIVE = -1
    COLLINEAR = 0
    POSITIVE = 1


def _exact_sign(ax, ay, bx, by, cx, cy) -> int:
    # scale all six to integers over the common power-of-two denominator
    ratios = [float(v).as_integer_ratio() for v in (ax, ay, bx, by, cx, cy)]
    den = max(d for _, d in ratios)
    ax, ay, bx, by, cx, cy = (n * (den // d) for n, d in ratios)
    d = (ax - cx) * (by - cy) - (ay - cy) * (bx - cx)
    return (d > 0) - (d < 0)


def orient_sign(p, q, s) -> int:
    """Sign of twice the signed area of triangle (p, q, s): +1 ccw, -1 cw, 0 collinear."""
    ax, ay = float(p[0]), float(p[1])
    bx, by = float(q[0]), float(q[1])
    cx, cy = float(s[0]), float(s[1])
    detleft = (ax - cx) * (by - cy)
    detright = (ay - cy) * (bx - cx)
    d = detleft - detright
    bound = _CCW_ERRBOUND * (abs(detleft) + abs(detright))
    if d > bound:
        return 1
    if -d > bound:
        return -1
    return _exact_sign(ax, ay, bx, by, cx, cy)


def orientation(p, q, s) -> Orientation:
    return Orientation(orient_sign(p, q, s))


def orient_signs(p: np.ndarray, q: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Vectorised :func:`orient_sign` over arrays of shape (n, 2)."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    s = np.asarray(s, dtype=float)
    detleft = (p[:, 0] - s[:, 0]) * (q[:, 1] - s[:, 1])
    detright = (p[:, 1] - s[:, 1]) * (q[:, 0] - s[:, 0])
    d = detleft - detright
    bound = _CCW_ERRBOUND * (np.abs(detleft) + np.abs(detright))
    out = np.zeros(len(d), dtype=np.int8)
    out[d > bound] = 1
    out[-d > bound] = -1
    for i in np.flatnonzero(np.abs(d) <= bound):
        out[i] = _exact_sign(p[i, 0], p[i, 1], q[i, 0], q[i, 1], s[i, 0], s[i, 1])
    return out


def triangle_signs(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    v = np.asarray(vertices, dtype=float)
    t = np.asarray(triangles, dtype=np.int64)
    if len(t) == 0:
        return np.zeros(0, dtype=np.int8)
    return orient_signs(v[t[:, 0]], v[t[:, 1]], v[t[:, 2]])


def segments_intersect(a, b, c, d) -> bool:
    """Closed segments [a,b] and [c,d] share at least one point (exact)."""
    o1 = orient_sign(a, b, c)
    o2 = orient_sign(a, b, d)
    o3 = orient_sign(c, d, a)
    o4 = orient_sign(c, d, b)
    if o1 * o2 < 0 and o3 * o4 < 0:
        return True

    def on_seg(p, q, r):
        return (min(p[0], q[0]) <= r[0] <= max(p[0], q[0])
                and min(p[1], q[1]) <= r[1] <= max(p[1], q[1]))

    if o1 == 0 and on_seg(a, b, c):
        return True
    if o2 == 0 and on_seg(a, b, d):
        return True
    if o3 == 0 and on_seg(c, d, a):
        return True
    if o4 == 0 and on_seg(c, d, b):
        return True
    return False


def find_segment_crossings(starts: np.ndarray, ends: np.ndarray, ids_a: np.ndarray,
                           ids_b: np.ndarray, max_report: int = 64) -> list[tuple[int, int]]:
    """Pairs of segments that meet anywhere other than at a shared endpoint index.

    Segments are given by endpoint coordinates plus the vertex ids of those
    endpoints; two segments sharing a vertex id are only reported when they
    overlap along a positive length. Candidate pairs come from a bounding-box
    sweep along x; the final decision is exact.
    """
    starts = np.asarray(starts, dtype=float)
    ends = np.asarray(ends, dtype=float)
    n = len(starts)
    if n < 2:
        return []
    lo = np.minimum(starts, ends)
    hi = np.maximum(starts, ends)
    order = np.argsort(lo[:, 0], kind="stable")
    found: list[tuple[int, int]] = []
    active: list[int] = []
    for idx in order:
        x0 = lo[idx, 0]
        active = [j for j in active if hi[j, 0] >= x0]
        if active:
            act = np.array(active)
            ok = (lo[act, 1] <= hi[idx, 1]) & (hi[act, 1] >= lo[idx, 1])
            for j in act[ok]:
                j = int(j)
                if _segments_conflict(starts, ends, ids_a, ids_b, idx, j):
                    found.append((min(idx, j), max(idx, j)))
                    if len(found) >= max_report:
                        return sorted(found)
        active.append(int(idx))
    return sorted(found)


def _segments_conflict(starts, ends, ids_a, ids_b, i, j) -> bool:
    a, b, c, d = starts[i], ends[i], starts[j], ends[j]
    shared = {int(ids_a[i]), int(ids_b[i])} & {int(ids_a[j]), int(ids_b[j])}
    if not shared:
        return segments_intersect(a, b, c, d)
    if len(shared) == 2:
        return True  # duplicated edge
    # one shared endpoint: conflict only if the other endpoint of one lies on the other segment
    sv = shared.pop()
    p_i = b if int(ids_a[i]) == sv else a
    p_j = d if int(ids_a[j]) == sv else c
    s = a if int(ids_a[i]) == sv else b
    if orient_sign(s, p_i, p_j) != 0:
        return False
    # collinear: overlap iff both lie on the same side of the shared vertex
    return float(np.dot(np.subtract(p_i, s), np.subtract(p_j, s))) > 0
