"""Piecewise affine maps on triangulations.

A :class:`PAMap` is a source triangulation plus one image point per source
vertex. On triangle T it equals ``x -> A_T x + b_T``. For a valid map the
inverse is the same connectivity with source and image swapped, so the
W^{1,1} energies of a map and its inverse agree triangle by triangle:
``|A_T| area(T) = |A_T^-1| |det A_T| area(T) = |A_T^-1| area(image T)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import linalg2
from .errors import NotHomeomorphism, OutsideDomain
from .linalg2 import Mat2
from .mesh import Triangulation, overlay
from .mesh.io import dumps_triangulation, parse_mesh_text
from .mesh.predicates import triangle_signs


class PAMap:
    def __init__(self, source: Triangulation, image_vertices):
        w = np.array(image_vertices, dtype=float).reshape(-1, 2)
        if len(w) != len(source.vertices):
            raise ValueError("need exactly one image point per source vertex")
        w.setflags(write=False)
        self.source = source
        self.image_vertices = w

    def __repr__(self) -> str:
        return f"PAMap({len(self.source.vertices)} vertices, {len(self.source)} triangles)"

    @cached_property
    def _pieces(self) -> tuple[np.ndarray, np.ndarray]:
        v = self.source.vertices
        w = self.image_vertices
        t = self.source.triangles
        p0, p1, p2 = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
        q0, q1, q2 = w[t[:, 0]], w[t[:, 1]], w[t[:, 2]]
        # columns of P and Q are edge vectors; A = Q adj(P) / det(P)
        p11, p21 = p1[:, 0] - p0[:, 0], p1[:, 1] - p0[:, 1]
        p12, p22 = p2[:, 0] - p0[:, 0], p2[:, 1] - p0[:, 1]
        q11, q21 = q1[:, 0] - q0[:, 0], q1[:, 1] - q0[:, 1]
        q12, q22 = q2[:, 0] - q0[:, 0], q2[:, 1] - q0[:, 1]
        det_p = p11 * p22 - p12 * p21
        A = np.empty((len(t), 2, 2))
        # operand order keeps A exactly the identity when Q == P
        A[:, 0, 0] = (q11 * p22 - q12 * p21) / det_p
        A[:, 0, 1] = (q12 * p11 - q11 * p12) / det_p
        A[:, 1, 0] = (q21 * p22 - q22 * p21) / det_p
        A[:, 1, 1] = (q22 * p11 - q21 * p12) / det_p
        b = q0 - np.einsum("kij,kj->ki", A, p0)
        A.setflags(write=False)
        b.setflags(write=False)
        return A, b

    @property
    def matrices(self) -> np.ndarray:
        """Per-triangle gradients, shape (M, 2, 2)."""
        return self._pieces[0]

    @property
    def offsets(self) -> np.ndarray:
        return self._pieces[1]

    @cached_property
    def image_areas(self) -> np.ndarray:
        w = self.image_vertices
        t = self.source.triangles
        p0, p1, p2 = w[t[:, 0]], w[t[:, 1]], w[t[:, 2]]
        return 0.5 * ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
                      - (p1[:, 1] - p0[:, 1]) * (p2[:, 0] - p0[:, 0]))

    def apply_piece(self, tri_ids, pts) -> np.ndarray:
        A, b = self._pieces
        return np.einsum("kij,kj->ki", A[tri_ids], pts) + b[tri_ids]

    def eval_many(self, pts, *, outside: str = "raise") -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        ids = self.source.locate_many(pts)
        miss = ids < 0
        if np.any(miss):
            if outside == "raise":
                raise OutsideDomain(f"{int(miss.sum())} points outside the source domain")
            out = np.full_like(pts, np.nan)
            ok = ~miss
            out[ok] = self.apply_piece(ids[ok], pts[ok])
            return out
        return self.apply_piece(ids, pts)

    def to_text(self) -> str:
        return dumps_triangulation(self.source, image_vertices=self.image_vertices)

    @classmethod
    def from_text(cls, text: str) -> "PAMap":
        t, w = parse_mesh_text(text)
        if w is None:
            raise ValueError("no image vertices ('w' records) in map file")
        return cls(t, w)


def eval(m: PAMap, p) -> tuple[float, float]:  # noqa: A001 - mirrors the operation name
    """Image of a single point; raises OutsideDomain."""
    k = m.source.locate(p)
    if k is None:
        raise OutsideDomain(f"point {tuple(p)} is outside the source domain")
    q = m.apply_piece(np.array([k]), np.asarray(p, dtype=float).reshape(1, 2))[0]
    return float(q[0]), float(q[1])


def gradient(m: PAMap, triangle: int) -> Mat2:
    return Mat2.from_array(m.matrices[triangle])


def identity_map(t: Triangulation) -> PAMap:
    return PAMap(t, t.vertices)


def affine_map(t: Triangulation, M, b=(0.0, 0.0)) -> PAMap:
    M = np.asarray(M.to_array() if isinstance(M, Mat2) else M, dtype=float)
    return PAMap(t, t.vertices @ M.T + np.asarray(b, dtype=float))


@dataclass(frozen=True)
class HomeoReport:
    is_homeomorphism: bool
    min_jacobian: float
    orientation_violations: list = field(default_factory=list)
    boundary_simple: bool = True


def validate_homeomorphism(m: PAMap) -> HomeoReport:
    """Positive image orientation on every triangle (exact) plus simple,
    non-crossing, orientation-keeping boundary image loops.

    Together these imply global injectivity: every image point has degree
    equal to its winding number with respect to the boundary image, which is
    0 or 1 for such loops, and each preimage counts +1.
    """
    t = m.source
    signs = triangle_signs(m.image_vertices, t.triangles)
    violations = np.flatnonzero(signs <= 0)
    jac = linalg2.batch_det(m.matrices).copy()
    jac[signs == 0] = 0.0
    jac[(signs < 0) & (jac > 0)] = -0.0
    jac[(signs > 0) & (jac <= 0)] = np.nextafter(0.0, 1.0)
    min_jac = float(jac.min()) if len(jac) else math.inf
    boundary_ok = t.boundary_is_simple(m.image_vertices)
    ok = len(violations) == 0 and boundary_ok
    return HomeoReport(ok, min_jac, [int(i) for i in violations], bool(boundary_ok))


def invert(m: PAMap) -> PAMap:
    report = validate_homeomorphism(m)
    if not report.is_homeomorphism:
        raise NotHomeomorphism(
            f"map is not a homeomorphism ({len(report.orientation_violations)} orientation "
            f"violations, boundary simple={report.boundary_simple})")
    image_mesh = Triangulation(m.image_vertices, m.source.triangles, m.source.tags)
    return PAMap(image_mesh, m.source.vertices)


def triangle_energies(m: PAMap, kind=None) -> np.ndarray:
    return linalg2.batch_norm(m.matrices, kind) * m.source.areas


def w11_energy(m: PAMap, kind=None) -> float:
    """Sum over triangles of |A_T| area(T), exactly rounded (fsum)."""
    return math.fsum(triangle_energies(m, kind))


def energy_identity_gap(m: PAMap, kind=None) -> float:
    return abs(w11_energy(m, kind) - w11_energy(invert(m), kind))


def l1_gradient_distance_bound(m1: PAMap, m2: PAMap, kind=None) -> tuple[float, float]:
    """(distance, uncertainty); the uncertainty covers sliver cells the overlay dropped."""
    ov = overlay(m1.source, m2.source)
    diff = m1.matrices[ov.parent1] - m2.matrices[ov.parent2]
    value = math.fsum(linalg2.batch_norm(diff, kind) * ov.areas)
    unc = 0.0
    if ov.discarded_area > 0:
        gmax = float(linalg2.batch_norm(m1.matrices, kind).max() + linalg2.batch_norm(m2.matrices, kind).max())
        unc = ov.discarded_area * gmax
    return value, unc


def l1_gradient_distance(m1: PAMap, m2: PAMap, kind=None) -> float:
    """Exact L1 distance of the gradients, integrated over the common refinement."""
    return l1_gradient_distance_bound(m1, m2, kind)[0]
