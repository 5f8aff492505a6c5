"""Exception hierarchy. Every error carries a stable machine-readable code."""


class BisobolevError(Exception):
    code = "error"
    exit_status = 1

    def to_dict(self):
        return {"error": type(self).__name__, "code": self.code, "message": str(self)}


class SingularMatrix(BisobolevError, ArithmeticError):
    code = "singular_matrix"
    exit_status = 10


class TriangulationFailed(BisobolevError):
    code = "triangulation_failed"
    exit_status = 11


class InvalidPolygon(BisobolevError, ValueError):
    code = "invalid_polygon"
    exit_status = 12


class OutsideDomain(BisobolevError, ValueError):
    code = "outside_domain"
    exit_status = 13


class NotHomeomorphism(BisobolevError):
    code = "not_homeomorphism"
    exit_status = 14


class UnknownMap(BisobolevError, KeyError):
    code = "unknown_map"
    exit_status = 15

    def __str__(self):
        return Exception.__str__(self)


class BadParams(BisobolevError, ValueError):
    code = "bad_params"
    exit_status = 16


class QuadratureUnstable(BisobolevError):
    code = "quadrature_unstable"
    exit_status = 17


class OracleFailure(BisobolevError):
    code = "oracle_failure"
    exit_status = 18


class NonInjectiveOracle(BisobolevError):
    code = "non_injective_oracle"
    exit_status = 19


class GluingFailed(BisobolevError):
    code = "gluing_failed"
    exit_status = 20


class InverseUnavailable(BisobolevError):
    code = "inverse_unavailable"
    exit_status = 21


class DegenerateJacobian(BisobolevError):
    code = "degenerate_jacobian"
    exit_status = 22


class ConfigError(BisobolevError, ValueError):
    code = "config_error"
    exit_status = 2


class EtaNotMet(BisobolevError):
    code = "eta_not_met"
    exit_status = 4


class ChecksFailed(BisobolevError):
    code = "checks_failed"
    exit_status = 5


class EmptyTiling(UserWarning):
    """Issued (not raised) when no lattice square passes the 3r containment test."""

    code = "empty_tiling"
    exit_status = 3


class OverlayDegenerate(UserWarning):
    """Issued when sliver overlay cells were discarded; the area is reported."""

    code = "overlay_degenerate"
