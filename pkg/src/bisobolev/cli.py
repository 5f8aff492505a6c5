"""Command line runner: ``tile``, ``approx``, ``verify`` and ``convergence``.

Settings come from built-in defaults, then an optional ``--config`` file of
``key = value`` lines, then command line flags. Structured output is JSON or
CSV written to ``--out-dir``; errors go to stderr as one JSON object.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import plotting
from .errors import (BisobolevError, ChecksFailed, ConfigError, DegenerateJacobian, EmptyTiling,
                     EtaNotMet, GluingFailed)
from .maps import CantorParams, MapOracle, numeric_w11_energy, parse_map
from .mesh import GradingParams, parse_domain, r_tiling, triangulation_to_svg
from .pamap import invert
from .pipeline import ApproxParams, ClassifyParams, Label, build_approximant, classify_squares
from .quadrature import QuadratureParams
from . import verify as vf

DEFAULT_SCHEDULE = (0.125, 0.0625, 0.03125, 0.015625)


def _real(text) -> float:
    text = str(text).strip()
    try:
        return float(Fraction(text)) if "/" in text else float(text)
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"not a number: {text!r}") from None


def _schedule(text) -> tuple[float, ...]:
    if isinstance(text, (tuple, list)):
        return tuple(float(v) for v in text)
    items = [t for t in str(text).replace(";", ",").replace(" ", ",").split(",") if t]
    if not items:
        raise ConfigError("empty r schedule")
    return tuple(_real(t) for t in items)


@dataclass
class ExperimentConfig:
    map: str = "identity"
    domain: str | None = None
    r: float = 0.125
    r_schedule: tuple = DEFAULT_SCHEDULE
    eta: float = 0.05
    norm: str = "frobenius"
    tau_j: float | None = None
    eps_res: float = 0.05
    eps_square: float = 0.1
    max_depth: int = 6
    quad_order: int = 6
    quad_tol: float = 1e-8
    seed: int = 0
    threads: int = 1
    out_dir: str = "out"
    svg: str | None = None

    _CONVERT = {"r": _real, "eta": _real, "tau_j": _real, "eps_res": _real, "eps_square": _real,
                "quad_tol": _real, "max_depth": int, "quad_order": int, "seed": int, "threads": int,
                "r_schedule": _schedule}

    def validate(self) -> "ExperimentConfig":
        if self.norm not in ("frobenius", "operator"):
            raise ConfigError(f"norm must be frobenius or operator, not {self.norm!r}")
        for k in ("r", "eta", "eps_res", "eps_square"):
            v = getattr(self, k)
            if not (math.isfinite(v) and v > 0):
                raise ConfigError(f"{k.replace('_', '-')} must be positive")
        if any(not (v > 0) for v in self.r_schedule):
            raise ConfigError("r-schedule entries must be positive")
        if self.tau_j is not None and not self.tau_j >= 0:
            raise ConfigError("tau-j must be nonnegative")
        if self.threads < 1 or self.max_depth < 0 or self.quad_order < 1:
            raise ConfigError("threads, max-depth and quad-order out of range")
        return self

    def update(self, values: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(self)}
        for k, v in values.items():
            key = k.strip().replace("-", "_")
            if key not in known:
                raise ConfigError(f"unknown config key {k!r}")
            if v is None:
                continue
            conv = self._CONVERT.get(key)
            try:
                setattr(self, key, conv(v) if conv else str(v))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {k}: {v!r} ({exc})") from None
        return self

    def to_dict(self) -> dict:
        # out_dir is where results go, not part of the experiment
        d = {k: v for k, v in asdict(self).items() if k not in ("out_dir", "svg")}
        d["r_schedule"] = list(self.r_schedule)
        return d

    def to_text(self) -> str:
        lines = []
        for k, v in self.to_dict().items():
            if v is None:
                continue
            if k == "r_schedule":
                v = ",".join(repr(float(x)) for x in v)
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"

    # derived objects

    def oracle(self) -> MapOracle:
        dom = parse_domain(self.domain) if self.domain else None
        return parse_map(self.map, dom)

    def quad(self) -> QuadratureParams:
        return QuadratureParams(order=self.quad_order, tol=self.quad_tol)

    def classify(self, o: MapOracle | None = None) -> ClassifyParams:
        if self.tau_j is None:
            cp = o.metadata.get("params") if o is not None else None
            if isinstance(cp, CantorParams):
                return vf.cantor_classify_params(cp, self.eps_res)
            return ClassifyParams(eps_res=self.eps_res)
        return ClassifyParams(tau_j=self.tau_j, eps_res=self.eps_res)

    def approx_params(self, o: MapOracle | None = None) -> ApproxParams:
        return ApproxParams(classify=self.classify(o), grading=GradingParams(), max_depth=self.max_depth,
                            quad=self.quad(), norm=self.norm, seed=self.seed)


def read_config_file(path) -> dict:
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        k, sep, v = line.partition("=")
        if not sep or not k.strip():
            raise ConfigError(f"{path}:{n}: expected key = value")
        out[k.strip()] = v.strip()
    return out


# ---------------------------------------------------------------------------
# output helpers


def _clean(x):
    if isinstance(x, float):
        return x if math.isfinite(x) else None
    if isinstance(x, (np.floating, np.integer)):
        return _clean(x.item())
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    return x


def dumps_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def _csv(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow(row)
    return buf.getvalue()


def tiling_svg(domain, tiling, width: int = 600) -> str:
    lo = np.min([l.min(axis=0) for l in domain.loops], axis=0)
    hi = np.max([l.max(axis=0) for l in domain.loops], axis=0)
    pad = 10
    scale = (width - 2 * pad) / float(max(hi - lo))
    height = int(round((hi[1] - lo[1]) * scale)) + 2 * pad

    def px(p):
        return "%.3f,%.3f" % (pad + (p[0] - lo[0]) * scale, height - pad - (p[1] - lo[1]) * scale)

    out = ['<?xml version="1.0" encoding="UTF-8"?>',
           f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">']
    for loop in domain.loops:
        out.append(f'<polygon points="{" ".join(px(p) for p in loop)}" fill="none" stroke="#000"/>')
    out.append('<g fill="#9ecae1" stroke="#31688e" stroke-width="0.5">')
    for q in tiling.squares:
        out.append(f'<polygon points="{" ".join(px(p) for p in q.corners)}"/>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# commands


def cmd_tile(cfg: ExperimentConfig) -> int:
    domain = parse_domain(cfg.domain or "unit-square")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        tiling = r_tiling(domain, cfg.r)
    print(f"{len(tiling)} squares, uncovered {tiling.uncovered_area:.6g}")
    if cfg.svg:
        _write(Path(cfg.svg), tiling_svg(domain, tiling))
    empty = [w for w in caught if issubclass(w.category, EmptyTiling)]
    if empty:
        print(json.dumps({"warning": "EmptyTiling", "code": EmptyTiling.code,
                          "message": str(empty[0].message), "exit_status": EmptyTiling.exit_status},
                         sort_keys=True), file=sys.stderr)
        return EmptyTiling.exit_status
    return 0


def _report_payload(cfg, rep) -> dict:
    return {"config": cfg.to_dict(), "report": rep.to_dict(), "eta_requested": cfg.eta,
            "eta_met": bool(rep.valid and rep.total_eta is not None and rep.total_eta <= cfg.eta)}


def cmd_approx(cfg: ExperimentConfig) -> int:
    o = cfg.oracle()
    out = Path(cfg.out_dir)
    m, rep = build_approximant(o, cfg.r, cfg.approx_params(o))
    _write(out / "config.txt", cfg.to_text())
    _write(out / "report.json", dumps_json(_report_payload(cfg, rep)))
    _write(out / "approximant.txt", m.to_text())
    _write(out / "mesh_before.svg", triangulation_to_svg(m.source))
    _write(out / "mesh_after.svg", triangulation_to_svg(m.source, vertices=m.image_vertices))
    if rep.valid:
        _write(out / "inverse.txt", invert(m).to_text())
    eta = "n/a" if rep.total_eta is None else f"{rep.total_eta:.6g}"
    print(f"{o.name}: r={cfg.r:g} triangles={rep.triangles} valid={rep.valid} total_eta={eta}")
    if not rep.valid:
        raise GluingFailed(f"approximant is not a homeomorphism after {rep.refinement_rounds} refinement rounds")
    if rep.total_eta is None or rep.total_eta > cfg.eta:
        raise EtaNotMet(f"total_eta {eta} exceeds requested eta {cfg.eta:g}")
    return 0


def _lebesgue_point(o: MapOracle, classes) -> np.ndarray | None:
    good = [c for c in classes if c.label is Label.GOOD]
    if not good:
        return None
    centers = np.array([c.square.center for c in good])
    mid = centers.mean(axis=0)
    # off the singular points, nearest the middle of the good region
    ok = [i for i in range(len(good))
          if all(np.hypot(*(centers[i] - np.asarray(s))) > good[i].square.side for s in o.singular_points)]
    if not ok:
        return None
    k = min(ok, key=lambda i: (float(np.hypot(*(centers[i] - mid))), i))
    return centers[k]


def verify_suite(cfg: ExperimentConfig) -> list[vf.CheckResult]:
    o = cfg.oracle()
    quad = cfg.quad()
    kind = cfg.norm
    classify = cfg.classify(o)
    cantor = o.metadata.get("params") if isinstance(o.metadata.get("params"), CantorParams) else None
    rows = [vf.check_change_of_variables(o, quad=quad)]
    if cantor is not None:
        rows += vf.check_flat_region_strict(cantor, quad)
    tiling = r_tiling(o.domain, cfg.r)
    classes = classify_squares(o, tiling, classify) if len(tiling) else []
    smooth = not o.piecewise_affine
    if smooth:
        x = _lebesgue_point(o, classes)
        if x is not None:
            try:
                rows += vf.check_lebesgue_estimates(o, x, [cfg.r, cfg.r / 2, cfg.r / 4], quad,
                                                    tau_j=classify.tau_j)
            except DegenerateJacobian:
                pass
    if o.has_inverse:
        if cantor is not None:
            _, bad = vf.cantor_bad_squares(cantor, cfg.r, classify)
        else:
            bad = []
            g = (np.arange(5) + 0.5) / 5
            for c in classes:
                if c.label is not Label.BAD:
                    continue
                x0, y0 = c.square.corners[0]
                pts = np.stack(np.meshgrid(x0 + g * cfg.r, y0 + g * cfg.r, indexing="ij"), axis=-1).reshape(-1, 2)
                if np.min(np.abs(o.gradient(pts)).max(axis=(1, 2))) > 0:
                    bad.append(c)
        for c in bad:
            rows += vf.check_degenerate_square(o, c.square, cfg.eps_square, quad, label=Label.BAD,
                                               kind=kind, index=c.index)
        for c in classes:
            if c.label is Label.GOOD:
                rows += vf.check_degenerate_square(o, c.square, cfg.eps_square, quad, label=Label.GOOD,
                                                   kind=kind, index=c.index)
        if smooth:
            rows += vf.check_interpolation_bound(o, cfg.r, quad, classify, kind)
        fwd = numeric_w11_energy(o, quad, kind)
        inv = numeric_w11_energy(o, quad, kind, inverse=True)
        unc = fwd.error + inv.error + vf.NOISE * fwd.value
        if o.image_domain is None:
            # the image is a sampled polygon: take the finer one, bound its error by the change
            fine = numeric_w11_energy(o, quad, kind, inverse=True, per_edge=1024)
            unc += abs(fine.value - inv.value) + fine.error
            inv = fine
        if o.piecewise_affine:
            unc = max(unc, 1e-9 * fwd.value)
        rows.append(vf.CheckResult("energy_identity_oracle", o.name, fwd.value, inv.value, unc, vf.IDENTITY))
    rows += vf.check_energy_identity_sequence(o, [cfg.r, cfg.r / 2], quad,
                                              ApproxParams(classify=classify, max_depth=cfg.max_depth,
                                                           quad=quad, norm=kind, errors=False, seed=cfg.seed),
                                              kind)
    if cantor is not None:
        rows += vf.check_cantor_depth_sequence(range(1, cantor.depth + 2), quad, kind,
                                               cantor.removal_ratio, cantor.flat_slope)
        rows += vf.check_cantor_bad_gradients(cantor, cfg.r, classify=classify)
    return rows


CSV_COLUMNS = ["check_name", "map", "r", "lhs", "rhs", "uncertainty", "satisfied"]


def cmd_verify(cfg: ExperimentConfig) -> int:
    rows = verify_suite(cfg)
    out = Path(cfg.out_dir)
    _write(out / "config.txt", cfg.to_text())
    _write(out / "checks.csv", _csv([r.row() for r in rows], CSV_COLUMNS))
    status = [r.status for r in rows]
    print(f"{len(rows)} checks: {status.count('true')} true, {status.count('inconclusive')} inconclusive, "
          f"{status.count('false')} false")
    if "false" in status:
        failed = sorted({r.check_name for r in rows if r.status == "false"})
        raise ChecksFailed(f"checks not satisfied: {', '.join(failed)}")
    return 0


CONVERGENCE_COLUMNS = ["r", "valid", "total_eta", "ratio", "linf_forward", "linf_inverse", "l1_grad_forward",
                       "l1_grad_inverse", "triangles", "good", "bad", "negligible", "refinement_rounds"]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    return str(v)


def cmd_convergence(cfg: ExperimentConfig) -> int:
    o = cfg.oracle()
    params = cfg.approx_params(o)
    if params.check_oracle:
        from .maps import check_injective

        check_injective(o, seed=cfg.seed)
        params = ApproxParams(**{**{f.name: getattr(params, f.name) for f in fields(params)},
                                 "check_oracle": False})

    def run(r):
        return build_approximant(o, r, params)[1]

    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        reports = list(pool.map(run, cfg.r_schedule))
    rows = []
    prev = None
    for r, rep in zip(cfg.r_schedule, reports):
        eta = rep.total_eta
        ratio = eta / prev if (eta is not None and prev) else None
        rows.append({"r": r, "valid": rep.valid, "total_eta": eta, "ratio": ratio,
                     "linf_forward": rep.linf_forward, "linf_inverse": rep.linf_inverse,
                     "l1_grad_forward": rep.l1_grad_forward, "l1_grad_inverse": rep.l1_grad_inverse,
                     "triangles": rep.triangles, "good": rep.counts["Good"], "bad": rep.counts["Bad"],
                     "negligible": rep.counts["Negligible"], "refinement_rounds": rep.refinement_rounds})
        prev = eta
    out = Path(cfg.out_dir)
    _write(out / "config.txt", cfg.to_text())
    _write(out / "convergence.csv", _csv([{k: _fmt(v) for k, v in row.items()} for row in rows],
                                         CONVERGENCE_COLUMNS))
    svg = plotting.convergence_svg([row["r"] for row in rows], [row["total_eta"] for row in rows], title=o.name)
    _write(out / "convergence.svg", svg)
    if cfg.svg:
        _write(Path(cfg.svg), svg)
    for row in rows:
        eta = "n/a" if row["total_eta"] is None else f"{row['total_eta']:.6g}"
        print(f"r={row['r']:g} valid={str(row['valid']).lower()} total_eta={eta}")
    return 0


COMMANDS = {"tile": cmd_tile, "approx": cmd_approx, "verify": cmd_verify, "convergence": cmd_convergence}


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bisobolev", description="Piecewise affine approximation of planar bi-Sobolev maps.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_text in (("tile", "r-tiling of a domain"),
                            ("approx", "build a piecewise affine approximant"),
                            ("verify", "run the numerical check suite"),
                            ("convergence", "approximation error over an r schedule")):
        s = sub.add_parser(name, help=help_text)
        s.add_argument("--config", help="file of key = value lines; flags override it")
        s.add_argument("--domain")
        s.add_argument("--map")
        s.add_argument("--r")
        s.add_argument("--r-schedule", dest="r_schedule", help="comma separated, fractions allowed")
        s.add_argument("--eta")
        s.add_argument("--norm", choices=("frobenius", "operator"))
        s.add_argument("--tau-j", dest="tau_j")
        s.add_argument("--eps-res", dest="eps_res")
        s.add_argument("--max-depth", dest="max_depth")
        s.add_argument("--quad-order", dest="quad_order")
        s.add_argument("--seed")
        s.add_argument("--threads")
        s.add_argument("--out-dir", dest="out_dir")
        s.add_argument("--svg")
    return p


FLAG_KEYS = ("domain", "map", "r", "r_schedule", "eta", "norm", "tau_j", "eps_res", "max_depth",
             "quad_order", "seed", "threads", "out_dir", "svg")


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if args.config:
        cfg.update(read_config_file(args.config))
    cfg.update({k: getattr(args, k) for k in FLAG_KEYS})
    return cfg.validate()


def _fail(payload: dict, status: int) -> int:
    print(json.dumps({**payload, "exit_status": status}, sort_keys=True), file=sys.stderr)
    return status


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args)
        return COMMANDS[args.command](cfg)
    except BisobolevError as exc:
        return _fail(exc.to_dict(), exc.exit_status)
    except Exception as exc:  # noqa: BLE001 - every failure must reach the caller as JSON
        return _fail({"error": type(exc).__name__, "code": "internal_error", "message": str(exc)}, 1)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
