import numpy as np
import pytest

from bisobolev.errors import GluingFailed
from bisobolev.maps import MapOracle, parse_map
from bisobolev.mesh import Diagonal, Square, r_tiling, unit_square
from bisobolev.pamap import validate_homeomorphism
from bisobolev.pipeline import (ApproxParams, ClassifyParams, Label, build_approximant, choose_diagonals,
                                classify_squares, interpolate_square, per_square_interpolation_error)


def twist(k: float) -> MapOracle:
    """Rotation of circles about the centre by k (1/2 - |x - c|)^2: a smooth homeomorphism."""
    def ev(p):
        d = p - 0.5
        rho = np.hypot(d[:, 0], d[:, 1])
        th = k * np.clip(0.5 - rho, 0, None) ** 2
        c, s = np.cos(th), np.sin(th)
        return np.stack([0.5 + c * d[:, 0] - s * d[:, 1], 0.5 + s * d[:, 0] + c * d[:, 1]], axis=1)

    return MapOracle(f"twist{k}", unit_square(), eval=ev)


def test_classify_identity_all_good():
    o = parse_map("identity")
    cls = classify_squares(o, r_tiling(o.domain, 0.1))
    assert len(cls) == 49
    assert all(c.label is Label.GOOD for c in cls)


def test_classify_radial_origin_bad():
    o = parse_map("radial:alpha=3")
    cls = classify_squares(o, r_tiling(o.domain, 0.05), ClassifyParams(tau_j=1e-3))
    # J = 3 |x|^4 < 1e-3 exactly when |x| < (1/3000)^(1/4), about 0.135
    rho = (1e-3 / 3) ** 0.25
    bad = [c for c in cls if c.label is Label.BAD]
    assert any(np.hypot(*c.square.center) == 0 for c in bad)
    assert all(np.hypot(*c.square.center) < rho + 0.05 for c in bad)
    far = [c for c in cls if np.hypot(*c.square.center) > rho + 0.05]
    assert far and all(c.label is Label.GOOD for c in far)


def test_classify_radial2_default_params():
    o = parse_map("radial:alpha=2")
    cls = classify_squares(o, r_tiling(o.domain, 0.05))
    for c in cls:
        (x0, y0), (x1, y1) = c.square.corners[0], c.square.corners[2]
        if x0 <= 0 <= x1 and y0 <= 0 <= y1:
            assert c.label in (Label.BAD, Label.NEGLIGIBLE)
        if np.hypot(*c.square.center) > 0.2:
            assert c.label is Label.GOOD


def test_choose_diagonal_prefers_positive_image():
    # corners ll, lr, ur, ul mapped so that only the ul-lr diagonal keeps both triangles positive
    U = np.array([[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.7, 0.3]]])
    assert choose_diagonals(U)[0]
    # and only the ll-ur diagonal here
    U = np.array([[[0.0, 0.0], [1.0, 0.0], [0.3, 0.3], [0.0, 1.0]]])
    assert not choose_diagonals(U)[0]


def test_interpolate_square_reproduces_affine():
    o = parse_map("affine:a11=2,a12=0.5,a21=-0.3,a22=1.2,b1=1,b2=-1")
    q = Square((0.5, 0.5), 0.2)
    for d in Diagonal:
        for M, b in interpolate_square(o, q, d):
            assert np.allclose(M.to_array(), [[2, 0.5], [-0.3, 1.2]], atol=1e-12)
            assert np.allclose(b, [1, -1], atol=1e-12)


def test_per_square_error_vanishes_for_affine():
    o = parse_map("shear:s=0.4")
    fwd, inv, unc = per_square_interpolation_error(o, Square((0.5, 0.5), 0.1), Diagonal.LL_UR)
    assert fwd <= 1e-13 and inv <= 1e-13


def test_identity_approximant_exact():
    m, rep = build_approximant(parse_map("identity"), 0.125)
    assert rep.valid and rep.total_eta == 0.0
    assert rep.energy_identity_gap == 0.0
    assert rep.counts == {"Good": 25, "Bad": 0, "Negligible": 0}


def test_approximant_interpolates_boundary():
    o = parse_map("radial:alpha=2")
    m, rep = build_approximant(o, 0.0625)
    assert rep.valid
    assert np.array_equal(m.image_vertices, o(m.source.vertices))


def test_gluing_failure_reported_and_raised():
    o = twist(40)
    m, rep = build_approximant(o, 0.125, ApproxParams(max_depth=0, errors=False, check_oracle=False))
    assert not rep.valid and rep.total_eta is None
    with pytest.raises(GluingFailed) as ei:
        build_approximant(o, 0.125, ApproxParams(max_depth=0, errors=False, check_oracle=False),
                          raise_on_failure=True)
    assert ei.value.pamap is not None and not ei.value.report.valid


def test_local_refinement_repairs_twist():
    o = twist(40)
    m, rep = build_approximant(o, 0.125, ApproxParams(max_depth=6, errors=False, check_oracle=False))
    assert rep.valid and rep.refinement_rounds > 0
    assert validate_homeomorphism(m).is_homeomorphism


def test_report_is_serialisable():
    import json

    _, rep = build_approximant(parse_map("sine_warp:a=0.1"), 0.125)
    d = rep.to_dict()
    json.dumps(d)
    assert set(d["methods"]) >= {"linf_forward", "l1_grad_forward", "linf_inverse", "l1_grad_inverse"}
    assert d["total_eta"] == pytest.approx(d["linf_forward"] + d["linf_inverse"] + d["l1_grad_forward"]
                                           + d["l1_grad_inverse"], rel=1e-15)


def test_inverse_terms_without_inverse_oracle_are_estimated():
    base = parse_map("sine_warp:a=0.1")
    o = MapOracle("sine_noinv", base.domain, eval=base.eval, grad=base.grad)
    _, rep = build_approximant(o, 0.125)
    _, ref = build_approximant(base, 0.125)
    assert "estimated" in rep.methods["l1_grad_inverse"]
    # the pulled-back integrand jumps along curved preimages of image edges, hence the loose match
    assert rep.l1_grad_inverse == pytest.approx(ref.l1_grad_inverse, rel=1e-3)
    assert rep.linf_inverse == pytest.approx(ref.linf_inverse, rel=0.2)
