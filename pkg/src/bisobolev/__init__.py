"""Piecewise affine approximation of planar bi-Sobolev homeomorphisms, with numerical checks."""
from .errors import BisobolevError
from .linalg2 import Mat2, NormKind
from .maps import MapOracle, builtin, parse_map
from .pamap import PAMap, invert, validate_homeomorphism, w11_energy
from .pipeline import ApproxParams, ApproxReport, build_approximant, classify_squares
from .quadrature import QuadratureParams

__version__ = "0.1.0"

__all__ = ["BisobolevError", "Mat2", "NormKind", "MapOracle", "builtin", "parse_map", "PAMap", "invert",
           "validate_homeomorphism", "w11_energy", "ApproxParams", "ApproxReport", "build_approximant",
           "classify_squares", "QuadratureParams"]
