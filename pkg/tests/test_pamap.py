import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bisobolev import pamap
from bisobolev.errors import NotHomeomorphism, OutsideDomain
from bisobolev.linalg2 import Mat2
from bisobolev.mesh import structured_grid
from bisobolev.pamap import PAMap

from conftest import fold_map, grid_map


def test_identity_is_exact():
    t = structured_grid(0, 0, 1, 1, 5, 3)
    m = pamap.identity_map(t)
    assert np.array_equal(m.matrices, np.broadcast_to(np.eye(2), m.matrices.shape))
    assert np.array_equal(m.offsets, np.zeros_like(m.offsets))
    assert pamap.eval(m, (0.3, 0.7)) == (0.3, 0.7)


def test_affine_map_gradients_and_eval():
    t = structured_grid(0, 0, 1, 1, 3, 3)
    M = np.array([[2.0, 1.0], [0.0, 0.5]])
    m = pamap.affine_map(t, M, (1.0, -2.0))
    assert np.allclose(m.matrices, M, atol=1e-14)
    assert pamap.gradient(m, 4) == Mat2(2.0, 1.0, 0.0, 0.5) or np.allclose(pamap.gradient(m, 4).to_array(), M)
    x, y = pamap.eval(m, (0.25, 0.5))
    assert (x, y) == pytest.approx((2 * 0.25 + 0.5 + 1.0, 0.25 - 2.0))


def test_eval_outside_raises():
    m = pamap.identity_map(structured_grid(0, 0, 1, 1, 2, 2))
    with pytest.raises(OutsideDomain):
        pamap.eval(m, (1.5, 0.5))
    out = m.eval_many(np.array([[1.5, 0.5], [0.5, 0.5]]), outside="nan")
    assert np.isnan(out[0]).all() and np.allclose(out[1], 0.5)


def test_single_triangle_energy_by_hand():
    # triangle (0,0),(1,0),(0,1) mapped by diag(2, 3): |A|_F = sqrt 13, area 1/2
    t = structured_grid(0, 0, 1, 1, 1, 1)
    m = pamap.affine_map(t, np.diag([2.0, 3.0]))
    assert pamap.w11_energy(m, "frobenius") == pytest.approx(math.sqrt(13), rel=1e-15)
    assert pamap.w11_energy(m, "operator") == pytest.approx(3.0, rel=1e-15)
    assert pamap.w11_energy(pamap.invert(m), "frobenius") == pytest.approx(math.sqrt(13), rel=1e-14)


def test_invert_roundtrip(rng):
    m = grid_map(6, 4, rng)
    mi = pamap.invert(m)
    pts = rng.uniform(0.01, 0.99, (300, 2))
    back = mi.eval_many(m.eval_many(pts))
    assert np.allclose(back, pts, atol=1e-12)
    assert np.allclose(mi.matrices @ m.matrices, np.eye(2), atol=1e-12)


def test_fold_detected_and_invert_refuses(rng):
    m = fold_map(4, 4, rng)
    rep = pamap.validate_homeomorphism(m)
    assert not rep.is_homeomorphism
    assert rep.orientation_violations and rep.min_jacobian <= 0
    with pytest.raises(NotHomeomorphism):
        pamap.invert(m)


def test_boundary_overlap_without_inversion_is_rejected():
    # two triangles, both positive, images overlap: a non-injective local homeomorphism
    from bisobolev.mesh import Triangulation

    src = Triangulation([[0, 0], [1, 0], [1, 1], [0, 1], [2, 0], [2, 1]],
                        [[0, 1, 2], [0, 2, 3], [1, 4, 5], [1, 5, 2]])
    img = np.array([[0, 0], [1, 0], [1, 1], [0, 1], [0.2, 0.1], [0.3, 0.9]], dtype=float)
    # triangles (1,4,5) and (1,5,2) map back over the first square
    m = PAMap(src, img)
    rep = pamap.validate_homeomorphism(m)
    assert not rep.is_homeomorphism


def test_text_roundtrip(rng):
    m = grid_map(3, 5, rng)
    back = PAMap.from_text(m.to_text())
    assert np.array_equal(back.image_vertices, m.image_vertices)
    assert np.array_equal(back.source.triangles, m.source.triangles)


def test_l1_distance_properties(rng):
    m1 = grid_map(4, 4, rng, affine=False)
    m2 = grid_map(3, 5, rng, affine=False)
    assert pamap.l1_gradient_distance(m1, m1) == 0.0
    d12 = pamap.l1_gradient_distance(m1, m2)
    d21 = pamap.l1_gradient_distance(m2, m1)
    assert d12 == pytest.approx(d21, rel=1e-12)
    # oracle: Monte Carlo estimate of the same integral
    pts = rng.uniform(0, 1, (200_000, 2))
    a = m1.matrices[m1.source.locate_many(pts)] - m2.matrices[m2.source.locate_many(pts)]
    mc = np.mean(np.sqrt(np.sum(a * a, axis=(1, 2))))
    assert d12 == pytest.approx(mc, rel=0.02)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2 ** 32 - 1), st.sampled_from(["frobenius", "operator"]))
def test_energy_identity_property(nx, ny, seed, kind):
    m = grid_map(nx, ny, np.random.default_rng(seed))
    assert pamap.validate_homeomorphism(m).is_homeomorphism
    e = pamap.w11_energy(m, kind)
    assert pamap.energy_identity_gap(m, kind) <= 1e-12 * e
    per = pamap.triangle_energies(m, kind)
    per_inv = pamap.triangle_energies(pamap.invert(m), kind)
    assert np.allclose(per, per_inv, rtol=1e-12, atol=0)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 8), st.integers(2, 8), st.integers(0, 2 ** 32 - 1))
def test_validate_consistent_with_signs(nx, ny, seed):
    rng = np.random.default_rng(seed)
    m = fold_map(nx, ny, rng) if seed % 2 else grid_map(nx, ny, rng)
    rep = pamap.validate_homeomorphism(m)
    assert (rep.min_jacobian > 0) == (len(rep.orientation_violations) == 0)
    if rep.is_homeomorphism:
        assert (m.image_areas > 0).all()
