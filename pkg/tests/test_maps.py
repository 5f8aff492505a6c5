import math
from fractions import Fraction

import numpy as np
import pytest

from bisobolev import maps
from bisobolev.errors import BadParams, InverseUnavailable, NonInjectiveOracle, UnknownMap
from bisobolev.maps import CantorParams, fd_gradient, parse_map
from bisobolev.mesh import structured_grid
from bisobolev.quadrature import QuadratureParams

from conftest import grid_map

SMOOTH = ["identity", "shear:s=0.7", "affine:a11=2,a12=0.5,a21=-0.3,a22=1.2,b1=1,b2=-1",
          "radial:alpha=2", "radial:alpha=3", "sine_warp:a=0.1", "cantor:depth=3"]


@pytest.mark.parametrize("spec", SMOOTH)
def test_gradient_matches_finite_differences(spec):
    o = parse_map(spec)
    pts = maps.sample_points(o.domain, 200, seed=1)
    if spec.startswith("cantor"):
        # keep away from breakpoints where the derivative jumps
        xs = np.array([float(p.x0) for p in o.metadata["pieces"]] + [1.0])
        pts = pts[np.min(np.abs(pts[:, 0, None] - xs[None]), axis=1) > 1e-4]
    g = o.gradient(pts)
    fd = fd_gradient(o.eval, pts, o.domain)
    assert np.allclose(g, fd, rtol=1e-5, atol=1e-5)


@pytest.mark.parametrize("spec", SMOOTH)
def test_inverse_round_trip(spec):
    o = parse_map(spec)
    pts = maps.sample_points(o.domain, 500, seed=2)
    assert np.allclose(o.inverse(o(pts)), pts, atol=1e-10)
    gi = o.inverse_gradient(o(pts))
    assert np.allclose(gi @ o.gradient(pts), np.eye(2), atol=1e-8)


def test_radial_jacobian_formula():
    # J = alpha |x|^(2(alpha-1)) for x -> |x|^(alpha-1) x
    for alpha in (0.5, 2.0, 3.0):
        o = maps.radial(alpha)
        pts = maps.sample_points(o.domain, 100, seed=3)
        r = np.hypot(pts[:, 0], pts[:, 1])
        assert np.allclose(o.jacobian(pts), alpha * r ** (2 * (alpha - 1)), rtol=1e-12)


def test_sine_warp_fixes_boundary_and_bounds():
    o = maps.sine_warp(0.1)
    t = np.linspace(0, 1, 33)
    edges = np.concatenate([np.stack([t, 0 * t], 1), np.stack([t, 0 * t + 1], 1),
                            np.stack([0 * t, t], 1), np.stack([0 * t + 1, t], 1)])
    assert np.allclose(o(edges), edges, atol=1e-15)
    with pytest.raises(BadParams):
        maps.sine_warp(0.4)


def test_fold_is_rejected():
    with pytest.raises(NonInjectiveOracle):
        maps.check_injective(parse_map("fold"))


def test_injective_builtins_pass():
    for spec in SMOOTH:
        maps.check_injective(parse_map(spec))


def test_parse_errors():
    with pytest.raises(UnknownMap):
        parse_map("spiral")
    with pytest.raises(BadParams):
        parse_map("shear:t=1")
    with pytest.raises(BadParams):
        parse_map("shear:s")
    with pytest.raises(BadParams):
        parse_map("affine:a11=0,a22=0")
    assert parse_map("sine-warp:a=1/20").metadata["a"] == 0.05
    assert parse_map("cantor:depth=2,removal=1/3,flat=1/2").metadata["params"].removal_ratio == Fraction(1, 3)


def test_no_inverse_oracle():
    o = maps.MapOracle("plain", maps.unit_square(), eval=lambda p: p.copy())
    assert not o.has_inverse
    with pytest.raises(InverseUnavailable):
        o.inverse(np.zeros((1, 2)))


# -- Cantor staircase -------------------------------------------------------

def test_cantor_depth1_pieces_by_hand():
    # rho = 1/4, lambda = 1/2: flats [0, 3/8] and [5/8, 1] with slope 1/2, middle slope 5/2
    pcs = maps.cantor_pieces(CantorParams(1))
    assert [(p.x0, p.x1) for p in pcs] == [(0, Fraction(3, 8)), (Fraction(3, 8), Fraction(5, 8)), (Fraction(5, 8), 1)]
    assert [p.slope for p in pcs] == [Fraction(1, 2), Fraction(5, 2), Fraction(1, 2)]
    e = maps.cantor_energy_exact(CantorParams(1), "frobenius")
    assert e == pytest.approx(0.75 * math.sqrt(1.25) + 0.25 * math.sqrt(7.25), rel=1e-15)


def test_cantor_flat_structure():
    for k in range(6):
        p = CantorParams(k)
        flats = [pc for pc in maps.cantor_pieces(p) if pc.flat]
        assert len(flats) == 2 ** k
        assert all(pc.slope == Fraction(1, 2 ** k) for pc in flats)
        assert sum(pc.x1 - pc.x0 for pc in flats) == Fraction(3, 4) ** k


def test_cantor_energies_bounded_and_increasing():
    vals = [maps.cantor_energy_exact(CantorParams(k), "frobenius") for k in range(1, 9)]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    assert max(vals) < 2.0
    inv = [maps.cantor_energy_exact(CantorParams(k), "frobenius", inverse=True) for k in range(1, 9)]
    assert inv == pytest.approx(vals, rel=1e-14)


@pytest.mark.parametrize("depth", [1, 3, 5])
@pytest.mark.parametrize("kind", ["frobenius", "operator"])
def test_cantor_numeric_energy_matches_exact(depth, kind):
    o = maps.cantor_product(CantorParams(depth))
    exact = maps.cantor_energy_exact(CantorParams(depth), kind)
    assert maps.numeric_w11_energy(o, kind=kind).value == pytest.approx(exact, rel=1e-12)
    assert maps.numeric_w11_energy(o, kind=kind, inverse=True).value == pytest.approx(exact, rel=1e-12)


def test_cantor_params_validated():
    with pytest.raises(BadParams):
        CantorParams(2, Fraction(3, 2))
    with pytest.raises(BadParams):
        CantorParams(2, Fraction(1, 4), Fraction(3))


# -- smooth energies against independent quadrature ---------------------------

def test_sine_energy_against_scipy():
    from scipy.integrate import dblquad

    a = 0.1
    o = maps.sine_warp(a)

    def f(y, x):
        g = o.gradient(np.array([[x, y]]))[0]
        return float(np.sqrt(np.sum(g * g)))

    ref = dblquad(f, 0, 1, 0, 1, epsabs=1e-12, epsrel=1e-12)[0]
    assert maps.numeric_w11_energy(o, QuadratureParams(order=8)).value == pytest.approx(ref, rel=1e-9)


def test_from_pamap_oracle(rng):
    m = grid_map(4, 3, rng)
    o = maps.from_pamap(m)
    pts = rng.uniform(0.01, 0.99, (100, 2))
    assert np.allclose(o(pts), m.eval_many(pts))
    assert o.piecewise_affine and o.has_inverse
    assert np.allclose(o.inverse(o(pts)), pts, atol=1e-12)
