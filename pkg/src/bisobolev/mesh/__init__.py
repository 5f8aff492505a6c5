"""Polygons, r-tilings, triangulations, exact orientation, point location and overlay."""
from .geometry import (NAMED_DOMAINS, Polygon, Square, centered_square, l_shape, parse_domain,
                       rectangle, square_with_hole, unit_square)
from .io import (dumps_triangulation, parse_mesh_text, read_triangulation, save_triangulation,
                 triangulation_to_svg)
from .overlay import Overlay, overlay
from .predicates import Orientation, orient_sign, orient_signs, orientation, segments_intersect
from .tiling import Tiling, r_tiling, square_of
from .triangulation import (Diagonal, GradingParams, StripBox, Triangulation, mesh_polygon,
                            square_triangulation, structured_grid, triangle_areas, triangulate)


def locate(t: Triangulation, p):
    """Index of the lowest-numbered triangle containing ``p``, or None when outside."""
    return t.locate(p)


__all__ = [
    "NAMED_DOMAINS", "Polygon", "Square", "centered_square", "l_shape", "parse_domain",
    "rectangle", "square_with_hole", "unit_square", "dumps_triangulation", "parse_mesh_text",
    "read_triangulation", "save_triangulation", "triangulation_to_svg", "Overlay", "overlay",
    "Orientation", "orient_sign", "orient_signs", "orientation", "segments_intersect", "Tiling",
    "r_tiling", "square_of", "Diagonal", "GradingParams", "StripBox", "Triangulation",
    "mesh_polygon", "square_triangulation", "structured_grid", "triangle_areas", "triangulate",
    "locate",
]
