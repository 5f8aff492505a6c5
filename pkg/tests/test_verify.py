import math
from fractions import Fraction

import numpy as np
import pytest

from bisobolev import maps, pamap
from bisobolev.maps import CantorParams, parse_map
from bisobolev.mesh import Square
from bisobolev.pipeline import Label
from bisobolev.verify import (IDENTITY, INEQUALITY, STRICT, CheckResult, cantor_bad_squares,
                              check_change_of_variables, check_degenerate_square, check_flat_region_strict,
                              flat_region_indicator, lebesgue_residuals, sample_injectivity, square_integrals)

from conftest import fold_map, grid_map


# -- status logic ---------------------------------------------------------------

def test_status_kinds():
    assert CheckResult("a", "m", 1.0, 2.0).status == "true"
    assert CheckResult("a", "m", 2.0, 1.0).status == "false"
    assert CheckResult("a", "m", 1.0, 1.0 + 1e-3, 1e-3, IDENTITY).status == "true"
    assert CheckResult("a", "m", 1.0, 1.1, 1e-3, IDENTITY).status == "false"
    assert CheckResult("a", "m", 1.0, 1.0, 0.0, STRICT).status == "false"
    assert CheckResult("a", "m", 0.5, 1.0, 0.1, STRICT).status == "true"
    assert CheckResult("a", "m", math.nan, 1.0).status == "false"


def test_inconclusive_when_uncertainty_carries_the_inequality():
    c = CheckResult("a", "m", 1.05, 1.0, 0.2, INEQUALITY)
    assert c.satisfied and c.inconclusive and c.status == "inconclusive"
    # a tiny uncertainty never makes a row inconclusive
    assert CheckResult("a", "m", 1.0 + 1e-15, 1.0, 1e-13).status == "true"


def test_row_formatting():
    row = CheckResult("x", "identity", 0.1, 0.2, 0.0, params={"r": 0.125}).row()
    assert row == {"check_name": "x", "map": "identity", "r": "0.125", "lhs": "0.1", "rhs": "0.2",
                   "uncertainty": "0.0", "satisfied": "true"}


# -- change of variables ----------------------------------------------------------

@pytest.mark.parametrize("spec", ["identity", "shear:s=0.5", "sine_warp:a=0.1", "radial:alpha=2"])
def test_change_of_variables_area(spec):
    o = parse_map(spec)
    c = check_change_of_variables(o)
    assert c.status == "true"
    # with phi = 1 both sides are the image area
    assert c.rhs == pytest.approx(maps.image_polygon(o).area, rel=1e-9)


def test_flat_indicator_measures_image_of_flats():
    # depth 1: flats [0, 3/8] and [5/8, 1] with slope 1/2 map to [0, 3/16] and [13/16, 1]
    p = CantorParams(1)
    phi = flat_region_indicator(p)
    xs = np.array([0.1, 0.18, 0.2, 0.5, 0.8, 0.9])
    got = phi(np.stack([xs, np.full_like(xs, 0.5)], axis=1))
    assert list(got) == [1, 1, 0, 0, 0, 1]


@pytest.mark.parametrize("depth", [1, 2, 3])
def test_flat_region_rows_against_exact(depth):
    p = CantorParams(depth)
    # exact: flats of total length (3/4)^k with slope 2^-k map onto measure (3/8)^k
    exact = float(Fraction(3, 8) ** depth)
    base, gap = check_flat_region_strict(p)
    assert base.status == "true"
    assert base.lhs == pytest.approx(exact, rel=1e-12) and base.rhs == pytest.approx(exact, rel=1e-12)
    assert gap.rhs == pytest.approx(0.5 * exact, rel=1e-12)
    assert gap.status == "false"


# -- first-order residuals -----------------------------------------------------

def test_residuals_vanish_for_affine():
    o = parse_map("affine:a11=2,a12=0.5,a21=-0.3,a22=1.2,b1=1,b2=-1")
    res = lebesgue_residuals(o, (0.5, 0.5), 0.1)
    assert res.eps1 <= 1e-13 and res.eps2 <= 1e-13 and res.eps3 <= 1e-13


def test_residuals_shrink_for_sine():
    o = parse_map("sine_warp:a=0.1")
    a = lebesgue_residuals(o, (0.4, 0.55), 0.08)
    b = lebesgue_residuals(o, (0.4, 0.55), 0.04)
    # a C^2 map has residuals linear in r
    for x, y in ((a.eps1, b.eps1), (a.eps2, b.eps2), (a.eps3, b.eps3)):
        assert y == pytest.approx(x / 2, rel=0.15)


# -- degenerate squares -----------------------------------------------------------

def test_square_integrals_identity():
    s = square_integrals(parse_map("identity"), Square((0.5, 0.5), 0.2))
    assert s.image_area == pytest.approx(0.04, rel=1e-14)
    assert s.forward_energy == pytest.approx(math.sqrt(2) * 0.04, rel=1e-12)
    assert s.inverse_energy == pytest.approx(math.sqrt(2) * 0.04, rel=1e-12)


def test_cantor_square_integrals_by_hand():
    # depth 1, square [0.05, 0.15] x [0.5, 0.6] inside the first flat (slope 1/2)
    o = maps.cantor_product(CantorParams(1))
    s = square_integrals(o, Square((0.1, 0.55), 0.1))
    assert s.image_area == pytest.approx(0.005, rel=1e-14)
    assert s.forward_energy == pytest.approx(math.sqrt(1.25) * 0.01, rel=1e-14)
    assert s.inverse_energy == pytest.approx(math.sqrt(5) * 0.005, rel=1e-14)


def test_degenerate_rows_on_cantor_bad_squares():
    # over a flat of slope s: |u(Q)| = s r^2 and the inverse energy is sqrt(1 + s^2) r^2,
    # so the area row holds iff s < eps sqrt(1 + s^2): true for s = 1/16, false for s = 1/8
    o, bad = cantor_bad_squares(CantorParams(4), 1 / 128)
    assert bad
    for c in bad:
        rows = check_degenerate_square(o, c.square, 0.1, label=Label.BAD)
        assert [r.check_name for r in rows] == ["degenerate_area", "degenerate_energy"]
        assert all(r.status == "true" for r in rows)
    o, bad = cantor_bad_squares(CantorParams(3), 1 / 64)
    area = [check_degenerate_square(o, c.square, 0.1)[0] for c in bad[:50]]
    assert area and all(r.status == "false" for r in area)


# -- sampled injectivity -----------------------------------------------------------

def test_sample_injectivity_agrees_on_simple_cases(rng):
    m = grid_map(5, 5, rng)
    assert sample_injectivity(m)
    f = fold_map(5, 5, rng)
    assert not sample_injectivity(f)
    assert pamap.validate_homeomorphism(m).is_homeomorphism
    assert not pamap.validate_homeomorphism(f).is_homeomorphism
