"""Tile, classify, interpolate, glue and measure.

The approximant interpolates the oracle at every vertex of a conforming mesh
whose interior squares come from an r-tiling and whose boundary strip is
meshed separately, so it agrees with the oracle on boundary vertices.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from . import linalg2
from .errors import GluingFailed, InverseUnavailable, OracleFailure
from .maps import MapOracle, check_injective
from .mesh import (Diagonal, GradingParams, Square, StripBox, Tiling, r_tiling, square_triangulation,
                   triangulate)
from .mesh.overlay import refine_by_cells
from .pamap import PAMap, invert, validate_homeomorphism, w11_energy
from .quadrature import QuadratureParams, integrate_triangles, triangle_nodes


class Label(str, Enum):
    GOOD = "Good"
    BAD = "Bad"
    NEGLIGIBLE = "Negligible"


@dataclass(frozen=True)
class ClassifyParams:
    tau_j: float = 1e-8     # absolute threshold on sampled |J|
    eps_res: float = 0.05   # residual threshold, relative to the tile side
    samples: int = 5        # s x s sample grid per square


@dataclass(frozen=True)
class SquareClassification:
    index: int
    square: Square
    label: Label
    sampled_min_abs_jacobian: float
    interpolation_residual: float
    chosen_diagonal: Diagonal


def _corner_images(o: MapOracle, squares: np.ndarray) -> np.ndarray:
    return o(squares.reshape(-1, 2)).reshape(-1, 4, 2)


def _image_dets(U: np.ndarray, diagonal: Diagonal) -> np.ndarray:
    """Signed doubled areas (n, 2) of the two image triangles."""
    out = []
    for a, b, c in diagonal.triangles():
        p, q, s = U[:, a], U[:, b], U[:, c]
        out.append((q[:, 0] - p[:, 0]) * (s[:, 1] - p[:, 1]) - (q[:, 1] - p[:, 1]) * (s[:, 0] - p[:, 0]))
    return np.stack(out, axis=1)


def choose_diagonals(U: np.ndarray) -> np.ndarray:
    """True where UL_LR gives the larger minimum (signed) image triangle area."""
    m1 = _image_dets(U, Diagonal.LL_UR).min(axis=1)
    m2 = _image_dets(U, Diagonal.UL_LR).min(axis=1)
    return m2 > m1


def interpolate_local(U: np.ndarray, xi: np.ndarray, eta: np.ndarray, ul_lr: np.ndarray) -> np.ndarray:
    """Evaluate the two-triangle interpolants at local coordinates in [0, 1]^2.

    ``U`` is (n, 4, 2) corner images (ccw from lower-left), ``xi``/``eta`` are
    (n, k), ``ul_lr`` (n,) selects the diagonal per square.
    """
    U0, U1, U2, U3 = (U[:, j, None, :] for j in range(4))
    X, E = xi[..., None], eta[..., None]
    lower = U0 + X * (U1 - U0) + E * (U2 - U1)
    upper = U0 + E * (U3 - U0) + X * (U2 - U3)
    a = np.where((xi >= eta)[..., None], lower, upper)
    left = U0 + X * (U1 - U0) + E * (U3 - U0)
    right = U2 + (1 - X) * (U3 - U2) + (1 - E) * (U1 - U2)
    b = np.where((xi + eta <= 1)[..., None], left, right)
    return np.where(ul_lr[:, None, None], b, a)


def classify_squares(o: MapOracle, tiling: Tiling, params: ClassifyParams = ClassifyParams()) -> list[SquareClassification]:
    n = len(tiling)
    if n == 0:
        return []
    r = tiling.r
    squares = tiling.squares
    corners = np.stack([q.corners for q in squares])
    try:
        U = _corner_images(o, corners)
    except Exception as exc:
        raise OracleFailure(f"oracle failed on square corners: {exc}") from exc
    ul_lr = choose_diagonals(U)
    s = params.samples
    g = (np.arange(s) + 0.5) / s
    XI, ETA = np.meshgrid(g, g, indexing="ij")
    xi = np.broadcast_to(XI.ravel(), (n, s * s))
    eta = np.broadcast_to(ETA.ravel(), (n, s * s))
    pts = corners[:, 0, None, :] + r * np.stack([xi, eta], axis=-1)
    interp = interpolate_local(U, xi, eta, ul_lr)
    try:
        flat = pts.reshape(-1, 2)
        val = o(flat).reshape(n, s * s, 2)
        J = o.jacobian(flat).reshape(n, s * s)
    except Exception as exc:
        raise OracleFailure(f"oracle failed on square samples: {exc}") from exc
    min_j = np.min(np.abs(J), axis=1)
    res = np.max(np.hypot(*(val - interp).transpose(2, 0, 1)), axis=1)
    bad_vals = ~np.isfinite(min_j) | ~np.isfinite(res)
    if np.any(bad_vals):
        raise OracleFailure(f"oracle returned non-finite values on square {int(np.argmax(bad_vals))}")
    small = res <= params.eps_res * r
    labels = []
    for i in range(n):
        if small[i] and min_j[i] >= params.tau_j:
            lab = Label.GOOD
        elif small[i]:
            lab = Label.BAD
        else:
            lab = Label.NEGLIGIBLE
        labels.append(SquareClassification(i, squares[i], lab, float(min_j[i]), float(res[i]),
                                           Diagonal.UL_LR if ul_lr[i] else Diagonal.LL_UR))
    return labels


def interpolate_square(o: MapOracle, q: Square, diagonal=Diagonal.LL_UR) -> list[tuple[linalg2.Mat2, np.ndarray]]:
    """The two affine pieces (matrix, offset) of the corner interpolation on ``q``."""
    t = square_triangulation(q, Diagonal(diagonal))
    m = PAMap(t, o(q.corners))
    return [(linalg2.Mat2.from_array(m.matrices[k]), np.array(m.offsets[k])) for k in range(2)]


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ApproxParams:
    classify: ClassifyParams = ClassifyParams()
    grading: GradingParams = GradingParams()
    max_depth: int = 6
    quad: QuadratureParams = QuadratureParams()
    norm: str | None = None
    check_oracle: bool = True
    errors: bool = True
    seed: int = 0


@dataclass
class ApproxReport:
    r: float
    counts: dict
    linf_forward: float | None = None
    linf_inverse: float | None = None
    l1_grad_forward: float | None = None
    l1_grad_inverse: float | None = None
    uncertainty: dict = field(default_factory=dict)
    total_eta: float | None = None
    gluing_ratio_K: float | None = None
    valid: bool = False
    methods: dict = field(default_factory=dict)
    triangles: int = 0
    refinement_rounds: int = 0
    energy_forward: float | None = None
    energy_inverse: float | None = None
    energy_identity_gap: float | None = None
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _balance(refine: dict[int, int], tiling: Tiling) -> None:
    """2:1 balance: a tile's refinement depth is at least its neighbour's minus one."""
    where = tiling.index_of()
    todo = sorted(refine)
    while todo:
        i = todo.pop()
        d = refine.get(i, 0)
        kx, ky = (int(v) for v in tiling.keys[i])
        for nb in ((kx + 1, ky), (kx - 1, ky), (kx, ky + 1), (kx, ky - 1)):
            j = where.get(nb)
            if j is not None and refine.get(j, 0) < d - 1:
                refine[j] = d - 1
                todo.append(j)


def build_mesh_map(o: MapOracle, tiling: Tiling, diagonals: dict, params: ApproxParams):
    """Mesh, interpolate at every vertex, validate; refine locally until valid or out of depth.

    Tiles holding inverted triangles are split further (one level per round,
    at most ``max_depth``, kept 2:1 balanced); strip cells holding them get
    finer strip points. Stops when valid, when nothing can be refined, or
    after ``4 * max_depth`` rounds.
    """
    refine: dict[int, int] = {}
    strip_cells: dict[tuple[int, int], int] = {}   # r-lattice cell -> strip level
    grading = params.grading
    r = tiling.r
    rounds = 0
    while True:
        boxes = tuple(StripBox((cx - 1) * r, (cy - 1) * r, (cx + 2) * r, (cy + 2) * r, lv)
                      for (cx, cy), lv in sorted(strip_cells.items()))
        mesh = triangulate(o.domain, tiling, grading, diagonals=diagonals, refine=refine, strip_boxes=boxes)
        m = PAMap(mesh, o(mesh.vertices))
        report = validate_homeomorphism(m)
        if report.is_homeomorphism or rounds >= 4 * params.max_depth:
            return m, report, rounds
        rounds += 1
        progressed = False
        cap = grading.depth + params.max_depth
        tiles_done: set = set()
        cells_done: set = set()
        for k in report.orientation_violations:
            tag = int(mesh.tags[k])
            if tag >= 0:
                if refine.get(tag, 0) < params.max_depth and tag not in tiles_done:
                    refine[tag] = refine.get(tag, 0) + 1
                    tiles_done.add(tag)
                    progressed = True
            else:
                c = mesh.vertices[mesh.triangles[k]].mean(axis=0)
                cell = (int(math.floor(c[0] / r)), int(math.floor(c[1] / r)))
                lv = strip_cells.get(cell, grading.depth)
                if lv < cap and cell not in cells_done:
                    strip_cells[cell] = lv + 1
                    cells_done.add(cell)
                    progressed = True
        _balance(refine, tiling)
        if not report.boundary_simple and grading.depth < params.max_depth + 1:
            grading = GradingParams(grading.depth + 1, grading.min_boundary_gap)
            progressed = True
        if not progressed:
            return m, report, rounds


def build_approximant(o: MapOracle, r: float, params: ApproxParams = ApproxParams(), *,
                      raise_on_failure: bool = False) -> tuple[PAMap, ApproxReport]:
    if params.check_oracle:
        check_injective(o, seed=params.seed)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        tiling = r_tiling(o.domain, r)
    classes = classify_squares(o, tiling, params.classify)
    diagonals = {c.index: c.chosen_diagonal for c in classes}
    m, hr, rounds = build_mesh_map(o, tiling, diagonals, params)
    counts = {lab.value: sum(c.label is lab for c in classes) for lab in Label}
    rep = ApproxReport(r=float(r), counts=counts, valid=hr.is_homeomorphism, triangles=len(m.source),
                       refinement_rounds=rounds, warnings=[str(w.message) for w in caught])
    rep.energy_forward = w11_energy(m, params.norm)
    if hr.is_homeomorphism:
        rep.energy_inverse = w11_energy(invert(m), params.norm)
        rep.energy_identity_gap = abs(rep.energy_forward - rep.energy_inverse)
    if params.errors:
        fields = error_report(o, m, params.quad, params.norm, valid=hr.is_homeomorphism)
        for k, v in fields.items():
            setattr(rep, k, v)
        rep.gluing_ratio_K = gluing_ratio_K(o, m, classes, params.quad, params.norm)
    if not hr.is_homeomorphism and raise_on_failure:
        exc = GluingFailed(f"approximant still not a homeomorphism after {rounds} refinement rounds")
        exc.pamap, exc.report = m, rep
        raise exc
    return m, rep


# ---------------------------------------------------------------------------
# error terms


def _sup_forward(o: MapOracle, m: PAMap, order: int) -> float:
    corners = m.source.vertices[m.source.triangles]
    nodes, _ = triangle_nodes(corners, order)
    ids = np.repeat(np.arange(len(corners)), nodes.shape[1])
    pts = nodes.reshape(-1, 2)
    d = o(pts) - m.apply_piece(ids, pts)
    return float(np.max(np.hypot(d[:, 0], d[:, 1]))) if len(d) else 0.0


def _l1_forward(o: MapOracle, m: PAMap, quad: QuadratureParams, kind, subset=None):
    pieces, mid, _ = refine_by_cells(m.source, o.cells)
    if subset is not None:
        keep = np.isin(mid, subset)
        pieces, mid = pieces[keep], mid[keep]
    A = m.matrices

    def f(p, ids):
        return linalg2.batch_norm(o.gradient(p) - A[ids], kind)

    return integrate_triangles(f, pieces, quad, piece_ids=mid, singular_points=o.singular_points, check=False)


def error_report(o: MapOracle, m: PAMap, quad: QuadratureParams = QuadratureParams(), kind=None,
                 *, valid: bool | None = None) -> dict:
    """The four error terms between oracle ``o`` and PA map ``m``.

    L-infinity terms are maxima over quadrature nodes (mesh vertices match
    exactly), hence lower bounds. L1 gradient terms are integrated over the
    mesh refined by the oracle's smooth cells; uncertainty is the two-level
    quadrature difference.
    """
    if valid is None:
        valid = validate_homeomorphism(m).is_homeomorphism
    out: dict = {"methods": {}, "uncertainty": {}}
    out["linf_forward"] = _sup_forward(o, m, quad.order)
    out["methods"]["linf_forward"] = f"max over {quad.order}x{quad.order} nodes per triangle (lower bound)"
    fwd = _l1_forward(o, m, quad, kind)
    out["l1_grad_forward"] = fwd.value
    out["uncertainty"]["l1_grad_forward"] = fwd.error
    out["methods"]["l1_grad_forward"] = "two-level collapsed Gauss over mesh x smooth cells"
    if not valid:
        out["linf_inverse"] = out["l1_grad_inverse"] = out["total_eta"] = None
        out["methods"]["inverse"] = "unavailable: approximant is not a homeomorphism"
        return out
    mi = invert(m)
    corners = mi.source.vertices[mi.source.triangles]
    if o.has_inverse:
        nodes, _ = triangle_nodes(corners, quad.order)
        ids = np.repeat(np.arange(len(corners)), nodes.shape[1])
        q = nodes.reshape(-1, 2)
        d = o.inverse(q) - mi.apply_piece(ids, q)
        out["linf_inverse"] = float(np.max(np.hypot(d[:, 0], d[:, 1])))
        out["methods"]["linf_inverse"] = "max over nodes of the image mesh (lower bound)"
        pieces, mid, _ = refine_by_cells(mi.source, o.image_cells)
        B = mi.matrices

        def f(p, ids):
            return linalg2.batch_norm(o.inverse_gradient(p) - B[ids], kind)

        inv = integrate_triangles(f, pieces, quad, piece_ids=mid,
                                  singular_points=o.image_singular_points, check=False)
        out["l1_grad_inverse"] = inv.value
        out["uncertainty"]["l1_grad_inverse"] = inv.error
        out["methods"]["l1_grad_inverse"] = "two-level collapsed Gauss over image mesh x image cells"
    else:
        # sup |u^-1 - m^-1| over u(samples) equals sup |p - m^-1(u(p))|
        fc = m.source.vertices[m.source.triangles]
        nodes, _ = triangle_nodes(fc, quad.order)
        p = nodes.reshape(-1, 2)
        back = mi.eval_many(o(p), outside="nan")
        d = np.hypot(*(back - p).T)
        out["linf_inverse"] = float(np.nanmax(d))
        out["methods"]["linf_inverse"] = "estimated by sampling: no inverse oracle (warning)"
        pieces, mid, _ = refine_by_cells(m.source, o.cells)
        B = mi.matrices

        def g(x, ids):
            # pulled back to the source: |Du(x)^-1 - B(u(x))| |J(x)|
            y = o(x)
            k = mi.source.locate_many(y)
            Du = o.gradient(x)
            J = np.abs(linalg2.batch_det(Du))
            inv_du = linalg2.batch_inverse(Du, check=False)
            val = linalg2.batch_norm(inv_du - B[np.maximum(k, 0)], kind) * J
            return np.where(k >= 0, val, 0.0)

        inv = integrate_triangles(g, pieces, quad, piece_ids=mid, check=False)
        out["l1_grad_inverse"] = inv.value
        out["uncertainty"]["l1_grad_inverse"] = inv.error
        out["methods"]["l1_grad_inverse"] = "estimated by sampling: pulled back to the source (warning)"
    out["total_eta"] = math.fsum([out["linf_forward"], out["linf_inverse"],
                                  out["l1_grad_forward"], out["l1_grad_inverse"]])
    return out


def gluing_ratio_K(o: MapOracle, m: PAMap, classes: list[SquareClassification],
                   quad: QuadratureParams = QuadratureParams(), kind=None) -> float | None:
    """Empirical ratio of |Dm| to |Du| integrated outside the Good squares."""
    good = {c.index for c in classes if c.label is Label.GOOD}
    tags = m.source.tags
    outside = np.flatnonzero(~np.isin(tags, list(good))) if good else np.arange(len(m.source))
    if len(outside) == 0:
        return None
    num = math.fsum(linalg2.batch_norm(m.matrices[outside], kind) * m.source.areas[outside])
    pieces, mid, _ = refine_by_cells(m.source, o.cells)
    keep = np.isin(mid, outside)
    den = integrate_triangles(lambda p: linalg2.batch_norm(o.gradient(p), kind), pieces[keep], quad,
                              singular_points=o.singular_points, check=False).value
    return num / den if den > 0 else None


def per_square_interpolation_error(o: MapOracle, q: Square, diagonal, quad: QuadratureParams = QuadratureParams(),
                                   kind=None) -> tuple[float, float, float]:
    """(forward, inverse, uncertainty) for the corner interpolation u_Q on one square.

    forward = integral over Q of |Du - Du_Q|; inverse = integral over u_Q(Q) of |Du^-1 - Du_Q^-1|.
    """
    if not o.has_inverse:
        raise InverseUnavailable(f"map {o.name!r} has no inverse oracle")
    t = square_triangulation(q, Diagonal(diagonal))
    m = PAMap(t, o(q.corners))
    fwd = _l1_forward(o, m, quad, kind)
    mi = invert(m)
    pieces, mid, _ = refine_by_cells(mi.source, o.image_cells)
    B = mi.matrices
    inv = integrate_triangles(lambda p, ids: linalg2.batch_norm(o.inverse_gradient(p) - B[ids], kind),
                              pieces, quad, piece_ids=mid, check=False)
    return fwd.value, inv.value, fwd.error + inv.error
