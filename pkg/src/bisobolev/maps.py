"""Concrete planar maps given as vectorised oracles.

Every oracle takes points as an (N, 2) array. ``grad`` returns (N, 2, 2).
Oracles are pure functions of their inputs and safe to call concurrently.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from . import linalg2
from .errors import BadParams, InverseUnavailable, NonInjectiveOracle, UnknownMap
from .mesh import (Polygon, Triangulation, centered_square, mesh_polygon, overlay, unit_square)
from .quadrature import QuadratureParams, QuadResult, integrate_triangles

PointFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class MapOracle:
    name: str
    domain: Polygon
    eval: PointFn
    grad: PointFn | None = None
    inverse_eval: PointFn | None = None
    inverse_grad: PointFn | None = None
    image_domain: Polygon | None = None
    cells: Triangulation | None = None          # pieces on which eval is smooth
    image_cells: Triangulation | None = None    # pieces on which inverse_eval is smooth
    singular_points: tuple = ()
    image_singular_points: tuple = ()
    piecewise_affine: bool = False
    metadata: dict = field(default_factory=dict)

    def __call__(self, pts) -> np.ndarray:
        return self.eval(_pts(pts))

    def gradient(self, pts) -> np.ndarray:
        pts = _pts(pts)
        if self.grad is not None:
            return self.grad(pts)
        return fd_gradient(self.eval, pts, self.domain)

    def jacobian(self, pts) -> np.ndarray:
        return linalg2.batch_det(self.gradient(pts))

    def inverse(self, pts) -> np.ndarray:
        if self.inverse_eval is None:
            raise InverseUnavailable(f"map {self.name!r} has no inverse oracle")
        return self.inverse_eval(_pts(pts))

    def inverse_gradient(self, pts) -> np.ndarray:
        pts = _pts(pts)
        if self.inverse_grad is not None:
            return self.inverse_grad(pts)
        if self.inverse_eval is None:
            raise InverseUnavailable(f"map {self.name!r} has no inverse oracle")
        return fd_gradient(self.inverse_eval, pts, self.image_domain)

    @property
    def has_inverse(self) -> bool:
        return self.inverse_eval is not None


def _pts(pts) -> np.ndarray:
    return np.atleast_2d(np.asarray(pts, dtype=float))


def fd_gradient(fn: PointFn, pts: np.ndarray, domain: Polygon | None = None, h: float | None = None) -> np.ndarray:
    """Central differences with step 1e-6 * diam; one-sided where a step leaves the domain."""
    pts = _pts(pts)
    if h is None:
        h = 1e-6 * (domain.diameter if domain is not None else 1.0)
    out = np.empty((len(pts), 2, 2))
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        fwd, bwd = pts + e, pts - e
        if domain is not None:
            in_f = domain.contains_points(fwd)
            in_b = domain.contains_points(bwd)
        else:
            in_f = in_b = np.ones(len(pts), dtype=bool)
        hi = np.where((in_f | ~in_b)[:, None], fwd, pts)
        lo = np.where((in_b | ~in_f)[:, None], bwd, pts)
        step = np.where(in_f & in_b, 2 * h, h)
        step = np.where(~in_f & ~in_b, 2 * h, step)
        out[:, :, j] = (fn(hi) - fn(lo)) / step[:, None]
    return out


# ---------------------------------------------------------------------------
# smooth families


def identity(domain: Polygon | None = None) -> MapOracle:
    domain = domain or unit_square()
    return MapOracle(
        "identity", domain,
        eval=lambda p: p.copy(),
        grad=lambda p: np.broadcast_to(np.eye(2), (len(p), 2, 2)).copy(),
        inverse_eval=lambda q: q.copy(),
        inverse_grad=lambda q: np.broadcast_to(np.eye(2), (len(q), 2, 2)).copy(),
        image_domain=domain, piecewise_affine=True,
        metadata={"bi_lipschitz": 1.0, "degenerate_set": "none"},
    )


def affine(M, b=(0.0, 0.0), domain: Polygon | None = None, name: str = "affine") -> MapOracle:
    domain = domain or unit_square()
    M = np.asarray(M, dtype=float).reshape(2, 2)
    b = np.asarray(b, dtype=float).reshape(2)
    Minv = linalg2.inverse(linalg2.Mat2.from_array(M)).to_array()
    image = Polygon(domain.outer @ M.T + b, tuple(h @ M.T + b for h in domain.holes))
    s1, s2 = linalg2.batch_singular_values(M)
    return MapOracle(
        name, domain,
        eval=lambda p: p @ M.T + b,
        grad=lambda p: np.broadcast_to(M, (len(p), 2, 2)).copy(),
        inverse_eval=lambda q: (q - b) @ Minv.T,
        inverse_grad=lambda q: np.broadcast_to(Minv, (len(q), 2, 2)).copy(),
        image_domain=image, piecewise_affine=True,
        metadata={"bi_lipschitz": float(max(s1, 1 / s2)), "degenerate_set": "none",
                  "matrix": M.tolist(), "offset": b.tolist()},
    )


def shear(s: float = 1.0, domain: Polygon | None = None) -> MapOracle:
    return affine([[1.0, s], [0.0, 1.0]], domain=domain, name="shear")


def radial(alpha: float = 2.0, domain: Polygon | None = None) -> MapOracle:
    """x -> |x|^(alpha-1) x. J = alpha |x|^(2(alpha-1)), so for alpha > 1 only the origin is degenerate."""
    if not alpha > 0:
        raise BadParams("radial map needs alpha > 0")
    domain = domain or centered_square()
    beta = 1.0 / alpha

    def power(p, a):
        r = np.hypot(p[:, 0], p[:, 1])
        with np.errstate(divide="ignore", invalid="ignore"):
            f = np.where(r > 0, r ** (a - 1.0), 0.0 if a > 1 else np.inf)
        return r, f

    def ev(p):
        r, f = power(p, alpha)
        return np.where((r > 0)[:, None], f[:, None] * p, 0.0)

    def jac(p, a):
        r, f = power(p, a)
        out = np.zeros((len(p), 2, 2))
        nz = r > 0
        u = p[nz] / r[nz, None]
        out[nz] = f[nz, None, None] * (np.eye(2) + (a - 1.0) * u[:, :, None] * u[:, None, :])
        if a < 1:
            out[~nz] = np.inf
        return out

    def inv(q):
        r, f = power(q, beta)
        return np.where((r > 0)[:, None], f[:, None] * q, 0.0)

    return MapOracle(
        "radial", domain, eval=ev, grad=lambda p: jac(p, alpha),
        inverse_eval=inv, inverse_grad=lambda q: jac(q, beta),
        singular_points=((0.0, 0.0),), image_singular_points=((0.0, 0.0),),
        metadata={"alpha": alpha, "bi_lipschitz": None if alpha != 1 else 1.0,
                  "degenerate_set": "origin" if alpha > 1 else "none"},
    )


def sine_warp(a: float = 0.1, domain: Polygon | None = None) -> MapOracle:
    """(x + a sin(pi x) sin(pi y), y); fixes the boundary of the unit square, injective for |a| pi < 1."""
    if not abs(a) * math.pi < 1:
        raise BadParams("sine_warp needs |a| < 1/pi to be injective")
    domain = domain or unit_square()
    pi = math.pi

    def ev(p):
        x, y = p[:, 0], p[:, 1]
        return np.stack([x + a * np.sin(pi * x) * np.sin(pi * y), y], axis=1)

    def gr(p):
        x, y = p[:, 0], p[:, 1]
        out = np.zeros((len(p), 2, 2))
        out[:, 0, 0] = 1 + a * pi * np.cos(pi * x) * np.sin(pi * y)
        out[:, 0, 1] = a * pi * np.sin(pi * x) * np.cos(pi * y)
        out[:, 1, 1] = 1.0
        return out

    def inv(q):
        X, y = q[:, 0], q[:, 1]
        sy = np.sin(pi * y)
        x = X.copy()
        for _ in range(60):
            f = x + a * np.sin(pi * x) * sy - X
            df = 1 + a * pi * np.cos(pi * x) * sy
            step = f / df
            x = x - step
            if np.all(np.abs(step) <= 1e-16 * (1 + np.abs(x))):
                break
        return np.stack([x, y], axis=1)

    def inv_grad(q):
        return linalg2.batch_inverse(gr(inv(q)))

    image = domain if domain.area == unit_square().area and np.array_equal(
        np.sort(domain.outer, axis=0), np.sort(unit_square().outer, axis=0)) else None
    lip = 1 + abs(a) * pi * math.sqrt(2)
    return MapOracle(
        "sine_warp", domain, eval=ev, grad=gr, inverse_eval=inv, inverse_grad=inv_grad,
        image_domain=image,
        metadata={"a": a, "bi_lipschitz": lip / (1 - abs(a) * pi), "degenerate_set": "none"},
    )


def fold(domain: Polygon | None = None) -> MapOracle:
    """((2x-1)^2, y): folds the unit square onto itself along x = 1/2. Not injective."""
    domain = domain or unit_square()

    def ev(p):
        return np.stack([(2 * p[:, 0] - 1) ** 2, p[:, 1]], axis=1)

    def gr(p):
        out = np.zeros((len(p), 2, 2))
        out[:, 0, 0] = 4 * (2 * p[:, 0] - 1)
        out[:, 1, 1] = 1.0
        return out

    return MapOracle("fold", domain, eval=ev, grad=gr,
                     metadata={"injective": False, "degenerate_set": "x = 1/2"})


# ---------------------------------------------------------------------------
# Cantor-type staircase


@dataclass(frozen=True)
class CantorParams:
    """Each level splits every remaining flat interval into left / middle / right.

    The middle part (``removal_ratio`` of the parent) becomes steep and is
    final; the outer parts keep being refined and their slope is multiplied by
    ``flat_slope`` per level. Every g_k is a strictly increasing bijection of [0, 1].
    """

    depth: int = 4
    removal_ratio: Fraction = Fraction(1, 4)
    flat_slope: Fraction = Fraction(1, 2)

    def __post_init__(self):
        object.__setattr__(self, "removal_ratio", Fraction(self.removal_ratio))
        object.__setattr__(self, "flat_slope", Fraction(self.flat_slope))
        rho, lam = self.removal_ratio, self.flat_slope
        if int(self.depth) != self.depth or self.depth < 0 or self.depth > 20:
            raise BadParams("cantor depth must be an integer in 0..20")
        if not 0 < rho < 1:
            raise BadParams("removal_ratio must lie in (0, 1)")
        if not 0 < lam or not lam * (1 - rho) < 1:
            raise BadParams("flat_slope must satisfy 0 < flat_slope < 1 / (1 - removal_ratio)")


@dataclass(frozen=True)
class CantorPiece:
    x0: Fraction
    x1: Fraction
    y0: Fraction
    y1: Fraction
    flat: bool          # still part of the refined (low-slope) set
    level: int          # level at which a steep piece was created; depth for flat pieces

    @property
    def slope(self) -> Fraction:
        return (self.y1 - self.y0) / (self.x1 - self.x0)


def cantor_pieces(params: CantorParams) -> list[CantorPiece]:
    rho, lam = params.removal_ratio, params.flat_slope
    pieces = [CantorPiece(Fraction(0), Fraction(1), Fraction(0), Fraction(1), True, 0)]
    for level in range(1, params.depth + 1):
        nxt = []
        for pc in pieces:
            if not pc.flat:
                nxt.append(pc)
                continue
            a = (pc.x1 - pc.x0) * (1 - rho) / 2
            b = (pc.y1 - pc.y0) * lam * (1 - rho) / 2
            nxt += [
                CantorPiece(pc.x0, pc.x0 + a, pc.y0, pc.y0 + b, True, level),
                CantorPiece(pc.x0 + a, pc.x1 - a, pc.y0 + b, pc.y1 - b, False, level),
                CantorPiece(pc.x1 - a, pc.x1, pc.y1 - b, pc.y1, True, level),
            ]
        pieces = nxt
    return pieces


def _strip_mesh(xs: np.ndarray) -> Triangulation:
    n = len(xs)
    verts = np.concatenate([np.stack([xs, np.zeros(n)], axis=1), np.stack([xs, np.ones(n)], axis=1)])
    tris = []
    for i in range(n - 1):
        tris.append([i, i + 1, n + i + 1])
        tris.append([i, n + i + 1, n + i])
    return Triangulation(verts, tris)


def cantor_product(params: CantorParams | None = None) -> MapOracle:
    """(g_k(x), y) on the unit square, g_k the depth-k staircase."""
    params = params or CantorParams()
    pieces = cantor_pieces(params)
    xs = np.array([float(p.x0) for p in pieces] + [1.0])
    ys = np.array([float(p.y0) for p in pieces] + [1.0])
    slopes = np.array([float(p.slope) for p in pieces])

    def piece_of(v, knots):
        return np.clip(np.searchsorted(knots, v, side="right") - 1, 0, len(pieces) - 1)

    def ev(p):
        return np.stack([np.interp(p[:, 0], xs, ys), p[:, 1]], axis=1)

    def gr(p):
        out = np.zeros((len(p), 2, 2))
        out[:, 0, 0] = slopes[piece_of(p[:, 0], xs)]
        out[:, 1, 1] = 1.0
        return out

    def inv(q):
        return np.stack([np.interp(q[:, 0], ys, xs), q[:, 1]], axis=1)

    def inv_gr(q):
        out = np.zeros((len(q), 2, 2))
        out[:, 0, 0] = 1.0 / slopes[piece_of(q[:, 0], ys)]
        out[:, 1, 1] = 1.0
        return out

    sq = unit_square()
    smin, smax = float(min(p.slope for p in pieces)), float(max(p.slope for p in pieces))
    return MapOracle(
        "cantor", sq, eval=ev, grad=gr, inverse_eval=inv, inverse_grad=inv_gr,
        image_domain=sq, cells=_strip_mesh(xs), image_cells=_strip_mesh(ys),
        piecewise_affine=True,
        metadata={"params": params, "pieces": pieces, "bi_lipschitz": max(smax, 1 / smin),
                  "degenerate_set": "none at finite depth; flat slope %s" % (params.flat_slope ** params.depth)},
    )


def cantor_flat_intervals(params: CantorParams) -> list[tuple[Fraction, Fraction]]:
    return [(p.x0, p.x1) for p in cantor_pieces(params) if p.flat]


def cantor_energy_exact(params: CantorParams, kind=None, inverse: bool = False) -> float:
    """Energy of (g_k(x), y) or of its inverse on the unit square, from per-interval sums."""
    terms = []
    for p in cantor_pieces(params):
        s = float(p.slope)
        a = np.array([[1.0 / s if inverse else s, 0.0], [0.0, 1.0]])
        length = float(p.y1 - p.y0) if inverse else float(p.x1 - p.x0)
        terms.append(float(linalg2.batch_norm(a, kind)) * length)
    return math.fsum(terms)


# ---------------------------------------------------------------------------
# piecewise affine maps as oracles


def _polygon_of(t: Triangulation, vertices=None) -> Polygon:
    v = t.vertices if vertices is None else np.asarray(vertices, dtype=float)
    loops = [v[loop] for loop in t.boundary]
    return Polygon(loops[0], tuple(loops[1:]))


def from_pamap(m, name: str = "pamap") -> MapOracle:
    from .pamap import invert, validate_homeomorphism

    src = m.source

    def locate(t, p):
        ids = t.locate_many(p)
        if np.any(ids < 0):
            from .errors import OutsideDomain
            raise OutsideDomain(f"{int(np.sum(ids < 0))} points outside the map's domain")
        return ids

    def gr(p):
        return np.array(m.matrices[locate(src, p)])

    inv_eval = inv_grad = image = image_cells = None
    report = validate_homeomorphism(m)
    if report.is_homeomorphism:
        mi = invert(m)
        image_cells = mi.source
        image = _polygon_of(src, m.image_vertices)
        inv_eval = mi.eval_many

        def inv_grad(q):
            return np.array(mi.matrices[locate(mi.source, q)])

    return MapOracle(
        name, _polygon_of(src), eval=m.eval_many, grad=gr, inverse_eval=inv_eval,
        inverse_grad=inv_grad, image_domain=image, cells=src, image_cells=image_cells,
        piecewise_affine=True,
        metadata={"triangles": len(src), "homeomorphism": report.is_homeomorphism},
    )


# ---------------------------------------------------------------------------
# lookup by name


def _num(v: str) -> float:
    return float(Fraction(v)) if "/" in v else float(v)


def parse_params(text: str) -> dict[str, str]:
    out = {}
    for item in text.replace(";", ",").split(","):
        item = item.strip()
        if not item:
            continue
        k, sep, v = item.partition("=")
        if not sep:
            raise BadParams(f"map parameter {item!r} is not key=value")
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def _take(params: dict, allowed: dict) -> dict:
    unknown = set(params) - set(allowed)
    if unknown:
        raise BadParams(f"unknown map parameters: {', '.join(sorted(unknown))}")
    out = {}
    for k, conv in allowed.items():
        if k in params:
            try:
                out[k] = conv(params[k])
            except (ValueError, ZeroDivisionError) as exc:
                raise BadParams(f"bad value for {k}: {params[k]!r} ({exc})") from None
    return out


def _build_affine(p, domain):
    q = _take(p, {k: _num for k in ("a11", "a12", "a21", "a22", "b1", "b2")})
    M = [[q.get("a11", 1.0), q.get("a12", 0.0)], [q.get("a21", 0.0), q.get("a22", 1.0)]]
    try:
        return affine(M, (q.get("b1", 0.0), q.get("b2", 0.0)), domain=domain)
    except Exception as exc:  # singular matrix
        raise BadParams(f"affine map must be invertible: {exc}") from None


def _build_cantor(p, domain):
    q = _take(p, {"depth": int, "removal": Fraction, "flat": Fraction})
    return cantor_product(CantorParams(q.get("depth", 4), q.get("removal", Fraction(1, 4)),
                                       q.get("flat", Fraction(1, 2))))


BUILTINS = {
    "identity": lambda p, d: (_take(p, {}), identity(d))[1],
    "affine": _build_affine,
    "shear": lambda p, d: shear(_take(p, {"s": _num}).get("s", 1.0), d),
    "radial": lambda p, d: radial(_take(p, {"alpha": _num}).get("alpha", 2.0), d),
    "sine_warp": lambda p, d: sine_warp(_take(p, {"a": _num}).get("a", 0.1), d),
    "cantor": _build_cantor,
    "fold": lambda p, d: (_take(p, {}), fold(d))[1],
}
ALIASES = {"sine": "sine_warp", "sine-warp": "sine_warp", "cantor_product": "cantor",
           "cantor-product": "cantor", "id": "identity"}


def builtin(name: str, params: dict | None = None, domain: Polygon | None = None) -> MapOracle:
    key = ALIASES.get(name, name)
    if key not in BUILTINS:
        raise UnknownMap(f"unknown map {name!r}; known: {', '.join(sorted(BUILTINS))}")
    params = {k.replace("-", "_"): str(v) for k, v in (params or {}).items()}
    return BUILTINS[key](params, domain)


def parse_map(spec: str, domain: Polygon | None = None) -> MapOracle:
    """``name`` or ``name:key=value,key=value``."""
    name, _, rest = spec.strip().partition(":")
    return builtin(name.strip(), parse_params(rest), domain)


# ---------------------------------------------------------------------------
# checks and energies


def sample_points(domain: Polygon, n: int, seed: int = 0) -> np.ndarray:
    """About ``n`` uniform points inside ``domain`` (rejection sampling)."""
    rng = np.random.default_rng(seed)
    x0, y0, x1, y1 = domain.bbox
    out = []
    got = 0
    while got < n:
        p = rng.uniform([x0, y0], [x1, y1], size=(2 * n, 2))
        p = p[domain.contains_points(p)]
        out.append(p)
        got += len(p)
    return np.concatenate(out)[:n]


def check_injective(o: MapOracle, n: int = 2000, seed: int = 0) -> None:
    """Raise NonInjectiveOracle when sampling finds evidence the oracle folds.

    Evidence is any of: Jacobians of both signs, a failed round trip through
    ``inverse_eval``, or two well-separated samples with (nearly) the same image.
    """
    from scipy.spatial import cKDTree

    pts = sample_points(o.domain, n, seed)
    diam = o.domain.diameter
    img = o(pts)
    if not np.all(np.isfinite(img)):
        raise NonInjectiveOracle(f"map {o.name!r} returned non-finite values")
    J = o.jacobian(pts)
    tiny = 1e-12 * max(float(np.max(np.abs(J))), 1e-300)
    if np.any(J > tiny) and np.any(J < -tiny):
        raise NonInjectiveOracle(f"map {o.name!r} has Jacobians of both signs")
    if o.inverse_eval is not None:
        back = o.inverse(img)
        err = float(np.max(np.hypot(*(back - pts).T)))
        if err > 1e-7 * diam:
            raise NonInjectiveOracle(f"map {o.name!r} fails the inverse round trip (error {err:.3e})")
    pairs = cKDTree(img).query_pairs(1e-9 * diam, output_type="ndarray")
    if len(pairs):
        sep = np.hypot(*(pts[pairs[:, 0]] - pts[pairs[:, 1]]).T)
        if np.any(sep > 1e-6 * diam):
            raise NonInjectiveOracle(f"map {o.name!r} sends distinct samples to the same point")


def integration_pieces(domain: Polygon, cells: Triangulation | None, quad: QuadratureParams,
                       singular_points=(), *, refine: bool = True) -> np.ndarray:
    """Triangles (k, 3, 2) covering ``domain`` on which the integrand is smooth.

    With ``refine=False`` the cells are used as they are, which suffices for
    integrands constant on each cell.
    """
    if cells is not None:
        mesh = mesh_polygon(domain, 0.5 * quad.h ** 2 if refine else None)
        return overlay(mesh, cells).vertices
    inside = [p for p in singular_points if domain.contains_points(np.asarray(p)[None])[0]]
    mesh = mesh_polygon(domain, 0.5 * quad.h ** 2, points=inside)
    return mesh.vertices[mesh.triangles]


def image_polygon(o: MapOracle, per_edge: int = 256) -> Polygon:
    """The image domain if known, else the image of a densely sampled boundary."""
    if o.image_domain is not None:
        return o.image_domain
    loops = []
    for loop in o.domain.loops:
        a, b = loop, np.roll(loop, -1, axis=0)
        t = np.arange(per_edge)[None, :, None] / per_edge
        pts = (a[:, None, :] + t * (b - a)[:, None, :]).reshape(-1, 2)
        loops.append(o(pts))
    return Polygon(loops[0], tuple(loops[1:]))


def numeric_w11_energy(o: MapOracle, quad: QuadratureParams = QuadratureParams(), kind=None,
                       *, inverse: bool = False, per_edge: int = 256) -> QuadResult:
    """Integral of |Du| over the domain (or |Du^-1| over the image) with a two-level error."""
    if inverse:
        if not o.has_inverse:
            raise InverseUnavailable(f"map {o.name!r} has no inverse oracle")
        pieces = integration_pieces(image_polygon(o, per_edge), o.image_cells, quad, o.image_singular_points,
                                    refine=not o.piecewise_affine)
        return integrate_triangles(lambda q: linalg2.batch_norm(o.inverse_gradient(q), kind), pieces, quad,
                                   singular_points=o.image_singular_points)
    pieces = integration_pieces(o.domain, o.cells, quad, o.singular_points, refine=not o.piecewise_affine)
    return integrate_triangles(lambda p: linalg2.batch_norm(o.gradient(p), kind), pieces, quad,
                               singular_points=o.singular_points)
