import math
import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bisobolev.errors import EmptyTiling, InvalidPolygon, TriangulationFailed
from bisobolev.mesh import (Diagonal, GradingParams, Polygon, Square, Triangulation, dumps_triangulation, l_shape,
                            orient_sign, orientation, overlay, parse_domain, parse_mesh_text, r_tiling, rectangle,
                            segments_intersect, square_triangulation, square_with_hole, structured_grid,
                            triangulate, triangulation_to_svg, unit_square)
from bisobolev.mesh.predicates import Orientation


def rect_tiling_oracle(x0, y0, x1, y1, r):
    """Lattice centres k r whose closed 3r square sits in the open rectangle, in exact arithmetic."""
    R = Fraction(r)
    h = Fraction(3, 2) * R
    X0, Y0, X1, Y1 = (Fraction(v) for v in (x0, y0, x1, y1))
    out = set()
    for kx in range(math.floor(x0 / r) - 1, math.ceil(x1 / r) + 2):
        for ky in range(math.floor(y0 / r) - 1, math.ceil(y1 / r) + 2):
            cx, cy = kx * R, ky * R
            if cx - h > X0 and cx + h < X1 and cy - h > Y0 and cy + h < Y1:
                out.add((kx, ky))
    return out


# -- tiling ------------------------------------------------------------------

def test_tiling_unit_square_r_tenth():
    t = r_tiling(unit_square(), 0.1)
    assert len(t) == 49
    assert t.uncovered_area == pytest.approx(0.51, abs=1e-12)
    xs = sorted({round(c, 12) for c in t.centers[:, 0]})
    assert xs == pytest.approx([0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8])


def test_tiling_empty_warns():
    with pytest.warns(EmptyTiling):
        t = r_tiling(unit_square(), 0.5)
    assert len(t) == 0
    assert t.uncovered_area == 1.0


def test_tiling_touching_boundary_is_excluded():
    # r = 1/8: centre 3/16 gives 3r square [0, 3/8], touching x = 0, so excluded
    t = r_tiling(unit_square(), 0.125)
    assert t.centers[:, 0].min() == 0.25


@settings(max_examples=40, deadline=None)
@given(st.integers(-4, 4), st.integers(-4, 4), st.integers(2, 9), st.integers(2, 9), st.sampled_from([0.05, 0.1, 0.125, 0.2, 1 / 3]))
def test_tiling_matches_exact_oracle_on_rectangles(a, b, w, h, r):
    x0, y0 = a * 0.25, b * 0.25
    x1, y1 = x0 + w * 0.3, y0 + h * 0.3
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptyTiling)
        t = r_tiling(rectangle(x0, y0, x1, y1), r)
    got = {(int(i), int(j)) for i, j in t.keys}
    assert got == rect_tiling_oracle(x0, y0, x1, y1, r)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(["unit-square", "centered-square", "rect:0,0,2,1", "rect:-1,-0.5,0.7,0.3"]),
       st.sampled_from([0.2, 0.1, 0.0625, 0.05]))
def test_uncovered_area_monotone_on_convex(dom, r):
    d = parse_domain(dom)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptyTiling)
        a = r_tiling(d, r)
        b = r_tiling(d, r / 2)
    assert b.uncovered_area <= a.uncovered_area + 1e-12


def test_tiling_squares_disjoint_and_inside_nonconvex():
    # dyadic r keeps the corner arithmetic below exact in floats
    for dom, r in ((l_shape(), 1 / 32), (square_with_hole(), 1 / 32), (square_with_hole(), 1 / 64)):
        t = r_tiling(dom, r)
        assert len(t) > 0
        big = [Square(q.center, 3 * q.side) for q in t.squares]
        for q in big:
            pts = q.corners
            assert dom.contains_points(pts).all()
            assert (dom.boundary_distance(pts) > 0).all()
        keys = {tuple(k) for k in t.keys}
        assert len(keys) == len(t)


def test_uncovered_area_shrinks():
    d = l_shape()
    vals = [r_tiling(d, r).uncovered_area for r in (0.1, 0.05, 0.025, 0.0125)]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 0.25 * vals[0]


# -- polygons ----------------------------------------------------------------

def test_polygon_orientation_and_area():
    p = Polygon([[0, 0], [0, 1], [1, 1], [1, 0]])
    assert p.area == 1.0
    assert square_with_hole().area == 1 - 0.25 ** 2


def test_invalid_polygons():
    with pytest.raises(InvalidPolygon):
        Polygon([[0, 0], [1, 1]])
    with pytest.raises(InvalidPolygon):
        Polygon([[0, 0], [1, 1], [1, 0], [0, 1]])  # bow tie
    with pytest.raises(InvalidPolygon):
        parse_domain("circle")


def test_parse_domain_forms():
    assert parse_domain("rect:0,0,2,1").area == 2.0
    assert parse_domain("poly:0,0;1,0;0,1").area == 0.5


# -- predicates ----------------------------------------------------------------

def test_orientation_exact_near_collinear():
    p, q = (0.5, 0.5), (12.0, 12.0)
    for i in range(40):
        s = (24.0, 24.0 + i * 2.0 ** -48)
        # exact oracle in rationals
        P, Q, S = ([Fraction(c) for c in v] for v in (p, q, s))
        d = (P[0] - S[0]) * (Q[1] - S[1]) - (P[1] - S[1]) * (Q[0] - S[0])
        assert orient_sign(p, q, s) == (d > 0) - (d < 0)
    assert orientation((0, 0), (1, 0), (0, 1)) is Orientation.POSITIVE
    assert orientation((0, 0), (1, 1), (2, 2)) is Orientation.COLLINEAR


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_subnormal=True), min_size=4, max_size=4),
       st.floats(-2, 2), st.integers(-3, 3))
def test_orientation_matches_rational_oracle(xy, t, ulps):
    # third point on or next to the line through the first two, across magnitudes
    p, q = (xy[0], xy[1]), (xy[2], xy[3])
    s = (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))
    s = (s[0], float(np.nextafter(s[1], np.inf if ulps > 0 else -np.inf)) if ulps else s[1])
    P, Q, S = ([Fraction(c) for c in v] for v in (p, q, s))
    d = (P[0] - S[0]) * (Q[1] - S[1]) - (P[1] - S[1]) * (Q[0] - S[0])
    assert orient_sign(p, q, s) == (d > 0) - (d < 0)


def test_segments_intersect():
    assert segments_intersect((0, 0), (1, 1), (0, 1), (1, 0))
    assert not segments_intersect((0, 0), (1, 0), (0, 1), (1, 1))
    assert segments_intersect((0, 0), (1, 0), (1, 0), (2, 0))


# -- triangulations ----------------------------------------------------------

def test_triangulation_rejects_inverted():
    with pytest.raises(TriangulationFailed):
        Triangulation([[0, 0], [1, 0], [0, 1]], [[0, 2, 1]])


def test_square_triangulation_diagonals():
    q = Square((0.5, 0.5), 1.0)
    for d in Diagonal:
        t = square_triangulation(q, d)
        assert len(t) == 2 and t.area == 1.0


@pytest.mark.parametrize("dom", ["unit-square", "centered-square", "l-shape", "square-with-hole"])
@pytest.mark.parametrize("r", [0.125, 0.05])
def test_triangulate_covers_domain(dom, r):
    d = parse_domain(dom)
    # the hole leaves no room for a 3r square at r = 1/8; the strip then covers everything
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        t = r_tiling(d, r)
    assert bool(caught) == (len(t) == 0)
    mesh = triangulate(d, t)
    assert math.isclose(mesh.area, d.area, rel_tol=1e-12)
    # every tile's two triangles are present and tagged
    tags, counts = np.unique(mesh.tags[mesh.tags >= 0], return_counts=True)
    assert list(tags) == list(range(len(t)))
    assert (counts == 2).all()
    loops = mesh.boundary
    assert len(loops) == len(d.loops)


def test_triangulate_refined_tiles_and_grading():
    d = unit_square()
    t = r_tiling(d, 0.125)
    mesh = triangulate(d, t, GradingParams(depth=3), refine={0: 2, 12: 1})
    assert math.isclose(mesh.area, 1.0, rel_tol=1e-12)
    assert np.sum(mesh.tags == 0) == 2 * 16
    assert np.sum(mesh.tags == 12) == 2 * 4
    # neighbours pick up hanging nodes but keep their area
    per_tag = np.bincount(mesh.tags[mesh.tags >= 0], weights=mesh.areas[mesh.tags >= 0])
    assert np.allclose(per_tag, 0.125 ** 2, rtol=1e-12)


def test_locate():
    g = structured_grid(0, 0, 1, 1, 4, 4)
    rng = np.random.default_rng(0)
    pts = rng.uniform(0, 1, (200, 2))
    ids = g.locate_many(pts)
    assert (ids >= 0).all()
    corners = g.vertices[g.triangles[ids]]
    for p, c in zip(pts, corners):
        # barycentric coordinates are nonnegative
        T = np.array([c[1] - c[0], c[2] - c[0]]).T
        lam = np.linalg.solve(T, p - c[0])
        assert lam.min() >= -1e-12 and lam.sum() <= 1 + 1e-12
    assert g.locate((2.0, 2.0)) is None


# -- overlay -----------------------------------------------------------------

@settings(max_examples=20, deadline=None)
@given(st.integers(1, 7), st.integers(1, 7), st.integers(1, 7), st.integers(1, 7),
       st.sampled_from(list(Diagonal)))
def test_overlay_partitions_both_meshes(a, b, c, d, diag):
    t1 = structured_grid(0, 0, 1, 1, a, b)
    t2 = structured_grid(0, 0, 1, 1, c, d, diag)
    ov = overlay(t1, t2)
    assert math.isclose(ov.area + ov.discarded_area, 1.0, rel_tol=1e-12)
    a1 = np.bincount(ov.parent1, weights=ov.areas, minlength=len(t1))
    a2 = np.bincount(ov.parent2, weights=ov.areas, minlength=len(t2))
    assert np.allclose(a1, t1.areas, rtol=1e-10, atol=1e-14)
    assert np.allclose(a2, t2.areas, rtol=1e-10, atol=1e-14)
    assert (ov.areas > 0).all()


# -- io ----------------------------------------------------------------------

def test_text_roundtrip_and_svg_determinism():
    d = l_shape()
    mesh = triangulate(d, r_tiling(d, 0.1))
    text = dumps_triangulation(mesh)
    back, w = parse_mesh_text(text)
    assert w is None
    assert np.array_equal(back.vertices, mesh.vertices)
    assert np.array_equal(back.triangles, mesh.triangles)
    assert np.array_equal(back.tags, mesh.tags)
    assert triangulation_to_svg(mesh) == triangulation_to_svg(back)
    assert triangulation_to_svg(mesh).startswith("<?xml")
