"""Plain-text mesh format and deterministic SVG export.

Text format, one record per line::

    v x y          vertex
    t i j k        triangle (0-based vertex ids)
    g tag          optional triangle tags, one per triangle, in order
    b i1 i2 ...    boundary loop
    w x y          image vertex (piecewise affine maps only)

Floats are written with ``repr`` so they round-trip bit-exactly.
"""
from __future__ import annotations

import io
from pathlib import Path

import numpy as np

from .triangulation import Triangulation


def _f(x: float) -> str:
    return repr(float(x))


def write_triangulation(t: Triangulation, fh, *, image_vertices=None) -> None:
    for x, y in t.vertices:
        fh.write(f"v {_f(x)} {_f(y)}\n")
    for a, b, c in t.triangles:
        fh.write(f"t {a} {b} {c}\n")
    if np.any(t.tags >= 0):
        for g in t.tags:
            fh.write(f"g {g}\n")
    for loop in t.boundary:
        fh.write("b " + " ".join(str(int(i)) for i in loop) + "\n")
    if image_vertices is not None:
        for x, y in image_vertices:
            fh.write(f"w {_f(x)} {_f(y)}\n")


def dumps_triangulation(t: Triangulation, *, image_vertices=None) -> str:
    buf = io.StringIO()
    write_triangulation(t, buf, image_vertices=image_vertices)
    return buf.getvalue()


def parse_mesh_text(text: str):
    """Returns (Triangulation, image vertices or None)."""
    verts, tris, tags, image = [], [], [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        kind, *rest = line.split()
        if kind == "v":
            verts.append((float(rest[0]), float(rest[1])))
        elif kind == "t":
            tris.append(tuple(int(x) for x in rest))
        elif kind == "g":
            tags.append(int(rest[0]))
        elif kind == "w":
            image.append((float(rest[0]), float(rest[1])))
        elif kind == "b":
            pass  # loops are recomputed from the triangles
        else:
            raise ValueError(f"line {lineno}: unknown record {kind!r}")
    t = Triangulation(np.array(verts).reshape(-1, 2), np.array(tris).reshape(-1, 3),
                      tags if tags else None)
    return t, (np.array(image).reshape(-1, 2) if image else None)


def read_triangulation(path) -> Triangulation:
    return parse_mesh_text(Path(path).read_text())[0]


def save_triangulation(t: Triangulation, path) -> None:
    Path(path).write_text(dumps_triangulation(t))


_PALETTE = ["#dde8f5", "#f7d9c4", "#d6ecd2", "#eee"]


def triangulation_to_svg(t: Triangulation, *, vertices=None, fill=None, width: int = 600,
                         stroke: str = "#333") -> str:
    """SVG of the mesh (optionally at displaced ``vertices``). Byte-stable for equal input.

    ``fill`` is an optional per-triangle list of CSS colours.
    """
    v = t.vertices if vertices is None else np.asarray(vertices, dtype=float)
    lo = v.min(axis=0)
    hi = v.max(axis=0)
    span = float(max(hi[0] - lo[0], hi[1] - lo[1], 1e-300))
    pad = 10
    scale = (width - 2 * pad) / span
    height = int(round((hi[1] - lo[1]) * scale)) + 2 * pad

    def px(p):
        return (pad + (p[0] - lo[0]) * scale, height - pad - (p[1] - lo[1]) * scale)

    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<g stroke="{stroke}" stroke-width="0.5" stroke-linejoin="round">',
    ]
    for k, tri in enumerate(t.triangles):
        pts = " ".join("%.3f,%.3f" % px(v[i]) for i in tri)
        colour = fill[k] if fill is not None else (_PALETTE[0] if t.tags[k] >= 0 else _PALETTE[3])
        lines.append(f'<polygon points="{pts}" fill="{colour}"/>')
    lines.append("</g>")
    lines.append("</svg>")
    return "\n".join(lines) + "\n"
