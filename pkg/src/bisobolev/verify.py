"""Numerical checks of change of variables, first-order expansions, degenerate
squares and the energy identity. Each check returns :class:`CheckResult` rows."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import linalg2
from .errors import BadParams, DegenerateJacobian, InverseUnavailable
from .maps import (CantorParams, MapOracle, cantor_flat_intervals, cantor_product, image_polygon,
                   integration_pieces)
from .mesh import Polygon, Square, mesh_polygon, overlay
from .pamap import PAMap, invert, validate_homeomorphism, w11_energy
from .pipeline import (ApproxParams, ClassifyParams, Label, build_approximant, classify_squares,
                       per_square_interpolation_error)
from .quadrature import QuadratureParams, integrate_triangles

INEQUALITY = "inequality"   # lhs <= rhs + uncertainty
IDENTITY = "identity"       # |lhs - rhs| <= uncertainty
STRICT = "strict"           # lhs + uncertainty < rhs

NOISE = 1e-12


@dataclass(frozen=True)
class CheckResult:
    check_name: str
    map_name: str
    lhs: float
    rhs: float
    uncertainty: float = 0.0
    kind: str = INEQUALITY
    params: dict = field(default_factory=dict)

    @property
    def satisfied(self) -> bool:
        if not (math.isfinite(self.lhs) and math.isfinite(self.rhs)):
            return False
        if self.kind == IDENTITY:
            return abs(self.lhs - self.rhs) <= self.uncertainty
        if self.kind == STRICT:
            return self.lhs + self.uncertainty < self.rhs
        return self.lhs <= self.rhs + self.uncertainty

    @property
    def inconclusive(self) -> bool:
        """True when an inequality only holds thanks to a large uncertainty."""
        if self.kind != INEQUALITY or not self.satisfied:
            return False
        # an excess at roundoff level is not evidence either way
        if self.lhs - self.rhs <= NOISE * max(1.0, abs(self.lhs), abs(self.rhs)):
            return False
        return self.uncertainty >= 0.1 * min(abs(self.lhs), abs(self.rhs))

    @property
    def status(self) -> str:
        if self.inconclusive:
            return "inconclusive"
        return "true" if self.satisfied else "false"

    @property
    def r(self):
        return self.params.get("r")

    def row(self) -> dict:
        return {"check_name": self.check_name, "map": self.map_name,
                "r": "" if self.r is None else repr(float(self.r)),
                "lhs": repr(float(self.lhs)), "rhs": repr(float(self.rhs)),
                "uncertainty": repr(float(self.uncertainty)), "satisfied": self.status}


# ---------------------------------------------------------------------------
# change of variables


def flat_region_indicator(params: CantorParams):
    """Indicator of g_k(F) x [0, 1], F the union of the depth-k flat intervals of the staircase."""
    o = cantor_product(params)
    ends = np.array([[float(a), float(b)] for a, b in cantor_flat_intervals(params)])
    img = o(np.stack([ends.ravel(), np.zeros(ends.size)], axis=1))[:, 0].reshape(-1, 2)

    def phi(y):
        x = y[:, 0]
        return np.any((x[:, None] > img[None, :, 0]) & (x[:, None] < img[None, :, 1]), axis=1).astype(float)

    return phi


def check_change_of_variables(o: MapOracle, phi=None, quad: QuadratureParams = QuadratureParams(),
                              name: str = "change_of_variables") -> CheckResult:
    """lhs = integral of phi(u(x)) |J(x)| over the domain, rhs = integral of phi over the image.

    For piecewise affine oracles the row is an identity check (equality within
    uncertainty); otherwise the inequality.
    """
    if phi is None:
        def phi(y):
            return np.ones(len(y))
    src = integration_pieces(o.domain, o.cells, quad, o.singular_points)
    lhs = integrate_triangles(lambda p: phi(o(p)) * np.abs(o.jacobian(p)), src, quad,
                              singular_points=o.singular_points, check=False)
    dst = integration_pieces(image_polygon(o), o.image_cells, quad, o.image_singular_points)
    rhs = integrate_triangles(phi, dst, quad, singular_points=o.image_singular_points, check=False)
    unc = lhs.error + rhs.error + NOISE * max(abs(lhs.value), abs(rhs.value))
    if o.piecewise_affine:
        unc = max(unc, 1e-9 * abs(rhs.value))
    return CheckResult(name, o.name, lhs.value, rhs.value, unc,
                       IDENTITY if o.piecewise_affine else INEQUALITY)


def check_flat_region_strict(params: CantorParams, quad: QuadratureParams = QuadratureParams(),
                             factor: float = 0.5) -> list[CheckResult]:
    """Change of variables with the flat-region indicator: the identity row and
    the strict-gap row ``lhs <= factor * rhs``."""
    o = cantor_product(params)
    base = check_change_of_variables(o, flat_region_indicator(params), quad, "change_of_variables_flat")
    p = {"depth": params.depth}
    base = CheckResult(base.check_name, base.map_name, base.lhs, base.rhs, base.uncertainty, base.kind, p)
    gap = CheckResult("change_of_variables_strict", o.name, base.lhs, factor * base.rhs,
                      base.uncertainty, INEQUALITY, {**p, "factor": factor})
    return [base, gap]


# ---------------------------------------------------------------------------
# first-order expansion residuals


def _fan(square: Square, center) -> np.ndarray:
    c = np.asarray(center, dtype=float)
    q = square.corners
    return np.stack([np.stack([c, q[j], q[(j + 1) % 4]]) for j in range(4)])


def _pieces_on(square: Square, center, cells) -> np.ndarray:
    fan = _fan(square, center)
    if cells is None:
        return fan
    from .mesh import Triangulation
    verts = fan.reshape(-1, 2)
    t = Triangulation(verts, np.arange(12).reshape(4, 3), check=False)
    return overlay(t, cells, domain_area=square.area).vertices


@dataclass(frozen=True)
class LebesgueResiduals:
    eps1: float
    eps2: float
    eps3: float | None
    uncertainty2: float
    uncertainty3: float

    @property
    def eps_max(self) -> float:
        return max(self.eps1, self.eps2, self.eps3 if self.eps3 is not None else 0.0)


def lebesgue_residuals(o: MapOracle, x, r: float, quad: QuadratureParams = QuadratureParams(), *,
                       tau_j: float = 1e-8, samples: int = 33, need_inverse: bool = True) -> LebesgueResiduals:
    """eps1 = sup_{Q_3r(x)} |u - v| / r, eps2 = int_{Q_3r(x)} |Du - Du(x)| / r^2 and
    eps3 = int_{u(Q_3r(x))} |Du^-1 - Du^-1(u(x))| / r^2, with v the first-order expansion at x.

    eps3 is computed on the source side through the change of variables
    (weight |J|), valid for maps with the Lusin N property.
    """
    x = np.asarray(x, dtype=float)
    big = Square((float(x[0]), float(x[1])), 3 * r)
    M = o.gradient(x[None])[0]
    ux = o(x[None])[0]
    g = np.linspace(-1.5 * r, 1.5 * r, samples)
    G = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2) + x
    d = o(G) - (ux + (G - x) @ M.T)
    eps1 = float(np.max(np.hypot(d[:, 0], d[:, 1]))) / r
    pieces = _pieces_on(big, x, o.cells)
    sing = (tuple(x),) + tuple(o.singular_points)
    I2 = integrate_triangles(lambda p: linalg2.batch_norm(o.gradient(p) - M, None), pieces, quad,
                             singular_points=sing, check=False)
    eps3 = None
    unc3 = 0.0
    if need_inverse:
        J = linalg2.batch_det(M)
        if abs(J) < tau_j:
            raise DegenerateJacobian(f"|J(x)| = {abs(J):.3e} below {tau_j:g}; no inverse residual at {tuple(x)}")
        Minv = linalg2.batch_inverse(M)

        def f3(p):
            D = o.gradient(p)
            return linalg2.batch_norm(linalg2.batch_inverse(D, check=False) - Minv, None) * np.abs(linalg2.batch_det(D))

        I3 = integrate_triangles(f3, pieces, quad, singular_points=sing, check=False)
        eps3 = I3.value / r ** 2
        unc3 = I3.error / r ** 2
    return LebesgueResiduals(eps1, I2.value / r ** 2, eps3, I2.error / r ** 2, unc3)


def check_lebesgue_estimates(o: MapOracle, x, r_list, quad: QuadratureParams = QuadratureParams(), *,
                             ratio: float = 0.7, tau_j: float = 1e-8) -> list[CheckResult]:
    """Each residual must shrink by ``ratio`` between successive radii (halvings)."""
    r_list = list(r_list)
    if len(r_list) < 2:
        raise BadParams("need at least two radii")
    res = [lebesgue_residuals(o, x, r, quad, tau_j=tau_j) for r in r_list]
    out = []
    for k in range(1, len(r_list)):
        a, b = res[k - 1], res[k]
        p = {"r": r_list[k], "x": tuple(map(float, x))}
        out.append(CheckResult("lebesgue_eps1", o.name, b.eps1, ratio * a.eps1, NOISE, params=p))
        out.append(CheckResult("lebesgue_eps2", o.name, b.eps2, ratio * a.eps2,
                               b.uncertainty2 + ratio * a.uncertainty2 + NOISE, params=p))
        out.append(CheckResult("lebesgue_eps3", o.name, b.eps3, ratio * a.eps3,
                               b.uncertainty3 + ratio * a.uncertainty3 + NOISE, params=p))
    return out


# ---------------------------------------------------------------------------
# degenerate and nondegenerate squares


@dataclass(frozen=True)
class SquareIntegrals:
    image_area: float
    inverse_energy: float
    forward_energy: float
    uncertainty: float


def square_integrals(o: MapOracle, q: Square, quad: QuadratureParams = QuadratureParams(), kind=None,
                     per_edge: int = 256) -> SquareIntegrals:
    """|u(Q)| from the polygon through the image of the sampled boundary of Q,
    the inverse energy over that polygon, and the forward energy over Q."""
    if not o.has_inverse:
        raise InverseUnavailable(f"map {o.name!r} has no inverse oracle")
    if "pieces" in o.metadata:
        return _staircase_square_integrals(o.metadata["pieces"], q, kind)
    a = q.corners
    b = np.roll(a, -1, axis=0)
    t = np.arange(per_edge)[None, :, None] / per_edge
    ring = (a[:, None, :] + t * (b - a)[:, None, :]).reshape(-1, 2)
    img = o(ring)
    poly = Polygon(img)
    image_area = poly.area
    ip = integration_pieces(poly, o.image_cells, QuadratureParams(quad.order, quad.tol, q.side / 2),
                            o.image_singular_points)
    inv = integrate_triangles(lambda y: linalg2.batch_norm(o.inverse_gradient(y), kind), ip, quad,
                              singular_points=o.image_singular_points, check=False)
    fp = _pieces_on(q, q.center, o.cells)
    fwd = integrate_triangles(lambda p: linalg2.batch_norm(o.gradient(p), kind), fp, quad,
                              singular_points=o.singular_points, check=False)
    return SquareIntegrals(image_area, inv.value, fwd.value, inv.error + fwd.error)


def _staircase_square_integrals(pieces, q: Square, kind=None) -> SquareIntegrals:
    """Exact per-interval sums for (g(x), y) with g piecewise linear."""
    (x0, y0), (x1, y1) = q.corners[0], q.corners[2]
    height = y1 - y0
    fwd, inv, img = [], [], []
    for pc in pieces:
        lo, hi = max(x0, float(pc.x0)), min(x1, float(pc.x1))
        if hi <= lo:
            continue
        s = float(pc.slope)
        length = hi - lo
        img.append(s * length)
        fwd.append(float(linalg2.batch_norm(np.array([[s, 0.0], [0.0, 1.0]]), kind)) * length)
        inv.append(float(linalg2.batch_norm(np.array([[1 / s, 0.0], [0.0, 1.0]]), kind)) * s * length)
    return SquareIntegrals(math.fsum(img) * height, math.fsum(inv) * height, math.fsum(fwd) * height, 0.0)


def check_degenerate_square(o: MapOracle, q: Square, eps: float, quad: QuadratureParams = QuadratureParams(),
                            *, label: Label = Label.BAD, kind=None, index=None) -> list[CheckResult]:
    """Bad squares: |u(Q)| < eps * int_{u(Q)} |Du^-1| and int_{u(Q)} |Du^-1| >= (1 - eps) int_Q |Du|.
    Good squares: only the second inequality."""
    s = square_integrals(o, q, quad, kind)
    p = {"r": q.side, "eps": eps, "square": index}
    unc = s.uncertainty + NOISE * max(s.inverse_energy, s.forward_energy)
    rows = []
    if label is Label.BAD:
        rows.append(CheckResult("degenerate_area", o.name, s.image_area, eps * s.inverse_energy,
                                eps * unc, STRICT, p))
    rows.append(CheckResult("degenerate_energy" if label is Label.BAD else "nondegenerate_energy", o.name,
                            (1 - eps) * s.forward_energy, s.inverse_energy, unc, INEQUALITY, p))
    return rows


# ---------------------------------------------------------------------------
# interpolation bound on good squares


def check_interpolation_bound(o: MapOracle, r: float, quad: QuadratureParams = QuadratureParams(),
                              classify: ClassifyParams = ClassifyParams(), kind=None) -> list[CheckResult]:
    """On each Good square: int_Q |Du - Du_Q| + int_{u_Q(Q)} |Du^-1 - Du_Q^-1| <= 5 eps r^2,
    eps the largest first-order residual measured at the square's center at radius r."""
    from .mesh import r_tiling

    tiling = r_tiling(o.domain, r)
    rows = []
    for c in classify_squares(o, tiling, classify):
        if c.label is not Label.GOOD:
            continue
        res = lebesgue_residuals(o, c.square.center, r, quad, tau_j=classify.tau_j)
        fwd, inv, unc = per_square_interpolation_error(o, c.square, c.chosen_diagonal, quad, kind)
        rhs = 5 * res.eps_max * r ** 2
        rows.append(CheckResult("interpolation_bound", o.name, fwd + inv, rhs, unc + NOISE * rhs,
                                params={"r": r, "square": c.index, "eps": res.eps_max}))
    return rows


# ---------------------------------------------------------------------------
# energy identity along approximants and across Cantor depths


def check_energy_identity_sequence(o: MapOracle, r_list, quad: QuadratureParams = QuadratureParams(),
                                   params: ApproxParams | None = None, kind=None) -> list[CheckResult]:
    """Per r: the PA approximant's forward and inverse energies agree, and its
    energy differs from the oracle's by at most the L1 gradient distance."""
    from .maps import numeric_w11_energy
    from .pipeline import _l1_forward

    params = params or ApproxParams(quad=quad, errors=False)
    oracle_energy = numeric_w11_energy(o, quad, kind)
    rows = []
    for r in r_list:
        m, rep = build_approximant(o, r, params)
        p = {"r": r}
        if not rep.valid:
            rows.append(CheckResult("energy_identity_pa", o.name, math.nan, math.nan, 0.0, IDENTITY, p))
            continue
        ef = w11_energy(m, kind)
        ei = w11_energy(invert(m), kind)
        rows.append(CheckResult("energy_identity_pa", o.name, ef, ei, 1e-9 * ef, IDENTITY, p))
        dist = _l1_forward(o, m, quad, kind)
        rows.append(CheckResult("pa_energy_gap", o.name, abs(ef - oracle_energy.value), dist.value,
                                oracle_energy.error + dist.error + NOISE * max(ef, 1.0), INEQUALITY, p))
    return rows


def check_cantor_depth_sequence(depths, quad: QuadratureParams = QuadratureParams(), kind=None,
                                removal_ratio=CantorParams.removal_ratio,
                                flat_slope=CantorParams.flat_slope) -> list[CheckResult]:
    """Forward energy stays below the bound 2 sqrt 2 |Omega| while the inverse energy strictly increases."""
    from .maps import numeric_w11_energy

    rows = []
    prev = None
    bound = 2 * math.sqrt(2)
    for k in depths:
        o = cantor_product(CantorParams(k, removal_ratio, flat_slope))
        name = f"cantor:depth={k}"
        fwd = numeric_w11_energy(o, quad, kind)
        inv = numeric_w11_energy(o, quad, kind, inverse=True)
        rows.append(CheckResult("cantor_forward_bounded", name, fwd.value, bound, fwd.error, INEQUALITY, {"depth": k}))
        if prev is not None:
            rows.append(CheckResult("cantor_inverse_increasing", name, prev.value, inv.value,
                                    prev.error + inv.error + NOISE, STRICT, {"depth": k}))
        prev = inv
    return rows


def cantor_classify_params(params: CantorParams, eps_res: float = 0.05) -> ClassifyParams:
    """tau_J set to twice the depth-k flat slope, so squares meeting a flat interval classify as Bad."""
    return ClassifyParams(tau_j=2 * float(params.flat_slope) ** params.depth, eps_res=eps_res)


def cantor_bad_squares(params: CantorParams, r: float, classify: ClassifyParams | None = None):
    """Bad squares of the Cantor map lying over a single flat interval."""
    from .mesh import r_tiling

    o = cantor_product(params)
    classify = classify or cantor_classify_params(params)
    flats = [(float(a), float(b)) for a, b in cantor_flat_intervals(params)]
    out = []
    for c in classify_squares(o, r_tiling(o.domain, r), classify):
        if c.label is not Label.BAD:
            continue
        x0, x1 = c.square.corners[0, 0], c.square.corners[1, 0]
        if any(a <= x0 and x1 <= b for a, b in flats):
            out.append(c)
    return o, out


def check_cantor_bad_gradients(params: CantorParams, r: float, threshold: float = 0.9,
                               classify: ClassifyParams | None = None, samples: int = 5) -> list[CheckResult]:
    """On each Bad square the sampled Du keeps operator norm >= threshold although J is tiny."""
    o, bad = cantor_bad_squares(params, r, classify)
    rows = []
    g = (np.arange(samples) + 0.5) / samples
    for c in bad:
        x0, y0 = c.square.corners[0]
        pts = np.stack(np.meshgrid(x0 + g * r, y0 + g * r, indexing="ij"), axis=-1).reshape(-1, 2)
        nrm = float(np.min(linalg2.batch_norm(o.gradient(pts), "operator")))
        rows.append(CheckResult("bad_square_gradient", o.name + f":depth={params.depth}", threshold, nrm, 0.0,
                                INEQUALITY, {"r": r, "square": c.index}))
    return rows


def sample_injectivity(m: PAMap, n: int = 60, seed: int = 0, tol: float = 1e-9) -> bool:
    """Brute-force test that a PA map is an orientation-preserving injection.

    Uses floating point only: rejects image triangles of nonpositive area,
    then maps a dense set of points (a barycentric grid, random points and
    the vertices of every triangle) and rejects the map when a sample of one
    image triangle falls strictly inside another image triangle.
    """
    from scipy.spatial import cKDTree

    t = m.source
    V = m.image_vertices[t.triangles]
    # a degenerate image triangle collapses a 2-cell: not injective
    ar = 0.5 * ((V[:, 1, 0] - V[:, 0, 0]) * (V[:, 2, 1] - V[:, 0, 1])
                - (V[:, 1, 1] - V[:, 0, 1]) * (V[:, 2, 0] - V[:, 0, 0]))
    scale = float(np.max(np.abs(m.image_vertices))) + 1.0
    if np.any(np.abs(ar) <= tol * scale ** 2):
        return False
    # only orientation-preserving maps count, as in validate_homeomorphism
    if np.any(ar < 0):
        return False
    rng = np.random.default_rng(seed)
    k = 6
    a, b = np.meshgrid(np.arange(1, k), np.arange(1, k), indexing="ij")
    keep = a + b < k
    bary = np.stack([a[keep], b[keep]], axis=1) / k
    bary = np.concatenate([bary, rng.dirichlet([1, 1, 1], size=n)[:, :2], [[0, 0], [1, 0], [0, 1]]])
    l1, l2 = bary[:, 0], bary[:, 1]
    img = (V[:, None, 0] * (1 - l1 - l2)[None, :, None] + V[:, None, 1] * l1[None, :, None]
           + V[:, None, 2] * l2[None, :, None])
    pts = img.reshape(-1, 2)
    owner = np.repeat(np.arange(len(V)), len(bary))
    # does any sampled interior image point lie strictly inside another image triangle?
    tree = cKDTree(pts)
    centers = V.mean(axis=1)
    radius = np.max(np.hypot(*(V - centers[:, None, :]).transpose(2, 0, 1)), axis=1)
    sgn = 1.0
    for j in range(len(V)):
        cand = np.array(tree.query_ball_point(centers[j], radius[j] * (1 + 1e-12)), dtype=np.int64)
        cand = cand[owner[cand] != j]
        if len(cand) == 0:
            continue
        P = pts[cand]
        A, B, C = V[j]
        d1 = sgn * ((B[0] - A[0]) * (P[:, 1] - A[1]) - (B[1] - A[1]) * (P[:, 0] - A[0]))
        d2 = sgn * ((C[0] - B[0]) * (P[:, 1] - B[1]) - (C[1] - B[1]) * (P[:, 0] - B[0]))
        d3 = sgn * ((A[0] - C[0]) * (P[:, 1] - C[1]) - (A[1] - C[1]) * (P[:, 0] - C[0]))
        eps = tol * scale ** 2
        if np.any((d1 > eps) & (d2 > eps) & (d3 > eps)):
            return False
    return True
