"""Collapsed Gauss-Legendre quadrature on triangles with a two-level error estimate."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import BadParams, QuadratureUnstable


@dataclass(frozen=True)
class QuadratureParams:
    order: int = 6          # Gauss points per direction
    tol: float = 1e-8       # relative tolerance on the two-level disagreement
    h: float = 0.125        # target mesh size when a domain has to be meshed
    grading: int = 24       # geometric levels toward singular corners

    def __post_init__(self):
        if self.order < 1 or self.order > 40:
            raise BadParams("quadrature order must be in 1..40")
        if self.grading < 0:
            raise BadParams("quadrature grading must be nonnegative")
        if not self.tol > 0 or not self.h > 0:
            raise BadParams("quadrature tol and h must be positive")


@dataclass(frozen=True)
class QuadResult:
    value: float
    error: float
    per_piece: np.ndarray = field(repr=False)  # fine-level value per integrated triangle

    def __iter__(self):
        return iter((self.value, self.error))


@lru_cache(maxsize=None)
def collapsed_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """(s, t) nodes and weights on the unit square for the map
    ``p = c0 + s((1-t)(c1-c0) + t(c2-c0))`` whose Jacobian is ``2 A s``.

    The collapse sits at c0, so integrands like ``|p - c0| f(angle)`` are
    polynomial in s and integrate to high accuracy.
    """
    x, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    S, T = np.meshgrid(x, x, indexing="ij")
    W = np.outer(w, w) * S
    for a in (S, T, W):
        a.setflags(write=False)
    return np.stack([S.ravel(), T.ravel()], axis=1), W.ravel()


def triangle_nodes(corners: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes (k, q, 2) and weights (k, q) for triangles ``corners`` (k, 3, 2)."""
    st, w = collapsed_rule(n)
    c0, c1, c2 = corners[:, 0], corners[:, 1], corners[:, 2]
    s, t = st[:, 0], st[:, 1]
    e1 = c1 - c0
    e2 = c2 - c0
    nodes = (c0[:, None, :] + s[None, :, None] * ((1 - t)[None, :, None] * e1[:, None, :]
                                                   + t[None, :, None] * e2[:, None, :]))
    area2 = np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    return nodes, area2[:, None] * w[None, :]


def split4(corners: np.ndarray) -> np.ndarray:
    """Midpoint subdivision; child 0 keeps corner 0 first, so collapse points survive."""
    c0, c1, c2 = corners[:, 0], corners[:, 1], corners[:, 2]
    m01, m12, m20 = 0.5 * (c0 + c1), 0.5 * (c1 + c2), 0.5 * (c2 + c0)
    kids = np.stack([
        np.stack([c0, m01, m20], axis=1),
        np.stack([c1, m12, m01], axis=1),
        np.stack([c2, m20, m12], axis=1),
        np.stack([m01, m12, m20], axis=1),
    ], axis=1)
    return kids.reshape(-1, 3, 2)


def put_first(corners: np.ndarray, points) -> np.ndarray:
    """Rotate corner order so a listed singular point, when present, is corner 0."""
    corners = np.array(corners, dtype=float)
    for p in points:
        p = np.asarray(p, dtype=float)
        for j in (1, 2):
            hit = np.all(corners[:, j] == p, axis=1)
            if np.any(hit):
                corners[hit] = np.roll(corners[hit], -j, axis=1)
    return corners


def grade_corners(corners: np.ndarray, points, levels: int, ids=None):
    """Split triangles whose corner 0 is a listed singular point ``levels`` times
    toward that corner (a geometric mesh), so integrable power singularities
    there lose at most a factor of the innermost triangle's size."""
    if levels <= 0 or not len(points):
        return corners, ids
    hit = np.zeros(len(corners), dtype=bool)
    for p in points:
        hit |= np.all(corners[:, 0] == np.asarray(p, dtype=float), axis=1)
    if not np.any(hit):
        return corners, ids
    keep, keep_ids = [corners[~hit]], [] if ids is None else [ids[~hit]]
    cur = corners[hit]
    cur_ids = None if ids is None else ids[hit]
    for _ in range(levels):
        kids = split4(cur).reshape(-1, 4, 3, 2)
        keep.append(kids[:, 1:].reshape(-1, 3, 2))
        if ids is not None:
            keep_ids.append(np.repeat(cur_ids, 3))
        cur = kids[:, 0]
    keep.append(cur)
    if ids is not None:
        keep_ids.append(cur_ids)
    return np.concatenate(keep), None if ids is None else np.concatenate(keep_ids)


def _eval_level(f, corners, n, ids=None, chunk=1 << 18):
    out = np.empty(len(corners))
    q = n * n
    step = max(1, chunk // q)
    for s in range(0, len(corners), step):
        c = corners[s:s + step]
        nodes, w = triangle_nodes(c, n)
        if ids is None:
            vals = f(nodes.reshape(-1, 2))
        else:
            vals = f(nodes.reshape(-1, 2), np.repeat(ids[s:s + step], q))
        vals = np.asarray(vals, dtype=float).reshape(len(c), q)
        out[s:s + step] = np.sum(vals * w, axis=1)
    return out


def integrate_triangles(f, corners, quad: QuadratureParams = QuadratureParams(), *,
                        singular_points=(), abs_floor: float = 0.0, check: bool = True,
                        piece_ids=None) -> QuadResult:
    """Integral of ``f`` (vectorised, (N,2) -> (N,)) over the union of triangles.

    With ``piece_ids`` (one label per triangle) ``f`` is called as
    ``f(points, labels)`` so it can use per-piece data.

    Coarse level: one rule per triangle. Fine level: the same rule on the four
    midpoint children. Returns the fine value and ``|fine - coarse|``.
    """
    corners = np.asarray(corners, dtype=float).reshape(-1, 3, 2)
    if len(corners) == 0:
        return QuadResult(0.0, 0.0, np.zeros(0))
    ids = None if piece_ids is None else np.asarray(piece_ids)
    if singular_points:
        corners = put_first(corners, singular_points)
        corners, ids = grade_corners(corners, singular_points, quad.grading, ids)
    coarse = _eval_level(f, corners, quad.order, ids)
    kid_ids = None if ids is None else np.repeat(ids, 4)
    fine = _eval_level(f, split4(corners), quad.order, kid_ids).reshape(-1, 4).sum(axis=1)
    value = math.fsum(fine)
    error = abs(value - math.fsum(coarse))
    # rounding noise of the sums themselves never counts as instability
    noise = 64 * np.finfo(float).eps * float(np.abs(fine).sum() + np.abs(coarse).sum())
    if check and error > 10 * quad.tol * (abs(value) + abs_floor) + noise:
        raise QuadratureUnstable(
            f"quadrature levels disagree: value {value:.6e}, difference {error:.3e} "
            f"exceeds 10 x tol ({quad.tol:g})")
    return QuadResult(value, error, fine)
