"""Deterministic SVG figures."""
from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.collections import PolyCollection  # noqa: E402

_RC = {"svg.hashsalt": "bisobolev", "svg.fonttype": "none", "path.simplify": False}


def _svg(fig) -> str:
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return buf.getvalue()


def convergence_svg(rs, etas, *, title: str = "") -> str:
    """total_eta against r; log-log when every value is positive."""
    pairs = [(r, e) for r, e in zip(rs, etas) if e is not None]
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 4))
        if pairs:
            x, y = zip(*pairs)
            ax.plot(x, y, "o-", color="#1f4e79")
            ax.set_xscale("log", base=2)
            if all(v > 0 for v in y):
                ax.set_yscale("log")
        ax.set_xlabel("r")
        ax.set_ylabel("total eta")
        if title:
            ax.set_title(title)
        ax.grid(True, which="both", lw=0.3)
        fig.tight_layout()
        return _svg(fig)


def mesh_svg(vertices, triangles, *, colors=None, title: str = "") -> str:
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 5))
        polys = vertices[triangles]
        pc = PolyCollection(polys, facecolors=colors if colors is not None else "#dde8f5",
                            edgecolors="#333333", linewidths=0.2)
        ax.add_collection(pc)
        ax.autoscale_view()
        ax.set_aspect("equal")
        if title:
            ax.set_title(title)
        fig.tight_layout()
        return _svg(fig)
