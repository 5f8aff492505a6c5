"""2x2 real matrices.

Scalar routines work on :class:`Mat2`; the ``batch_*`` routines work on numpy
arrays of shape ``(..., 2, 2)`` and are what the mesh-level code uses.

Both supported norms satisfy ``|M| = |det M| |M^-1|`` because ``adj(M)`` has
the same singular values as ``M``.
"""
from __future__ import annotations

import contextlib
import math
import contextvars
import enum
from dataclasses import dataclass

import numpy as np

from .errors import SingularMatrix

__all__ = [
    "Mat2", "NormKind", "det", "adjugate", "trace", "singular_values", "norm",
    "inverse", "default_norm", "set_default_norm", "using_norm",
    "batch_det", "batch_adjugate", "batch_inverse", "batch_singular_values",
    "batch_norm", "SINGULAR_RTOL",
]

# |det| <= SINGULAR_RTOL * |M|_F^2 counts as singular
SINGULAR_RTOL = 1e-14


class NormKind(str, enum.Enum):
    FROBENIUS = "frobenius"
    OPERATOR = "operator"

    @classmethod
    def parse(cls, value) -> "NormKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown norm kind {value!r}; use 'frobenius' or 'operator'") from None


_norm_kind = contextvars.ContextVar("norm_kind", default=NormKind.FROBENIUS)


def default_norm() -> NormKind:
    return _norm_kind.get()


def set_default_norm(kind) -> None:
    """Switch the norm used wherever ``kind=None`` is passed."""
    _norm_kind.set(NormKind.parse(kind))


@contextlib.contextmanager
def using_norm(kind):
    token = _norm_kind.set(NormKind.parse(kind))
    try:
        yield
    finally:
        _norm_kind.reset(token)


def _kind(kind) -> NormKind:
    return default_norm() if kind is None else NormKind.parse(kind)


@dataclass(frozen=True)
class Mat2:
    a11: float
    a12: float
    a21: float
    a22: float

    @classmethod
    def from_array(cls, a) -> "Mat2":
        a = np.asarray(a, dtype=float)
        return cls(float(a[0, 0]), float(a[0, 1]), float(a[1, 0]), float(a[1, 1]))

    @classmethod
    def identity(cls) -> "Mat2":
        return cls(1.0, 0.0, 0.0, 1.0)

    def to_array(self) -> np.ndarray:
        return np.array([[self.a11, self.a12], [self.a21, self.a22]])

    def __matmul__(self, other):
        if isinstance(other, Mat2):
            return Mat2(
                self.a11 * other.a11 + self.a12 * other.a21,
                self.a11 * other.a12 + self.a12 * other.a22,
                self.a21 * other.a11 + self.a22 * other.a21,
                self.a21 * other.a12 + self.a22 * other.a22,
            )
        x, y = other
        return (self.a11 * x + self.a12 * y, self.a21 * x + self.a22 * y)

    def __sub__(self, other: "Mat2") -> "Mat2":
        return Mat2(self.a11 - other.a11, self.a12 - other.a12,
                    self.a21 - other.a21, self.a22 - other.a22)

    def __add__(self, other: "Mat2") -> "Mat2":
        return Mat2(self.a11 + other.a11, self.a12 + other.a12,
                    self.a21 + other.a21, self.a22 + other.a22)

    def scale(self, s: float) -> "Mat2":
        return Mat2(s * self.a11, s * self.a12, s * self.a21, s * self.a22)

    def det(self) -> float:
        return det(self)

    def adjugate(self) -> "Mat2":
        return adjugate(self)

    def inverse(self) -> "Mat2":
        return inverse(self)

    def singular_values(self) -> tuple[float, float]:
        return singular_values(self)

    def norm(self, kind=None) -> float:
        return norm(self, kind)


def det(m: Mat2) -> float:
    return m.a11 * m.a22 - m.a12 * m.a21


def trace(m: Mat2) -> float:
    return m.a11 + m.a22


def adjugate(m: Mat2) -> Mat2:
    return Mat2(m.a22, -m.a12, -m.a21, m.a11)


def _unit_scaled(a11, a12, a21, a22):
    """Entries times 2^-e with the largest in [1/2, 1); exact, and keeps hypot out of subnormals."""
    big = np.maximum(np.maximum(np.abs(a11), np.abs(a12)), np.maximum(np.abs(a21), np.abs(a22)))
    e = np.frexp(big)[1]
    return tuple(np.ldexp(x, -e) for x in (a11, a12, a21, a22)), e


def _frobenius(a11, a12, a21, a22):
    (a11, a12, a21, a22), e = _unit_scaled(a11, a12, a21, a22)
    return np.ldexp(np.hypot(np.hypot(a11, a12), np.hypot(a21, a22)), e)


def _singular_values(a11, a12, a21, a22):
    (a11, a12, a21, a22), e = _unit_scaled(a11, a12, a21, a22)
    s_plus = np.hypot(a11 + a22, a12 - a21)
    s_minus = np.hypot(a11 - a22, a12 + a21)
    s1 = 0.5 * (s_plus + s_minus)
    with np.errstate(divide="ignore", invalid="ignore"):
        s2 = np.where(s1 > 0, np.minimum(np.abs(a11 * a22 - a12 * a21) / s1, s1), 0.0)
    return np.ldexp(s1, e), np.ldexp(s2, e)


def _scalar_scaled(m: Mat2):
    # same exact scaling as _unit_scaled, without ufunc overhead
    e = math.frexp(max(abs(m.a11), abs(m.a12), abs(m.a21), abs(m.a22)))[1]
    return tuple(math.ldexp(x, -e) for x in (m.a11, m.a12, m.a21, m.a22)), e


def singular_values(m: Mat2) -> tuple[float, float]:
    """Closed form: sigma1 +- sigma2 = |(a+d, b-c)| and |(a-d, b+c)|.

    These two hypotenuses are ``sqrt(|M|_F^2 +- 2 det M)`` written without
    cancellation; the small singular value is recovered as ``|det|/sigma1``.
    """
    if not all(math.isfinite(x) for x in (m.a11, m.a12, m.a21, m.a22)):
        s1, s2 = _singular_values(m.a11, m.a12, m.a21, m.a22)
        return float(s1), float(s2)
    (a11, a12, a21, a22), e = _scalar_scaled(m)
    s1 = 0.5 * (float(np.hypot(a11 + a22, a12 - a21)) + float(np.hypot(a11 - a22, a12 + a21)))
    if s1 == 0.0:
        return 0.0, 0.0
    s2 = min(abs(a11 * a22 - a12 * a21) / s1, s1)
    return math.ldexp(s1, e), math.ldexp(s2, e)


def norm(m: Mat2, kind=None) -> float:
    if _kind(kind) is NormKind.FROBENIUS:
        if not all(math.isfinite(x) for x in (m.a11, m.a12, m.a21, m.a22)):
            return float(_frobenius(m.a11, m.a12, m.a21, m.a22))
        # bitwise equal to batch_norm
        (a11, a12, a21, a22), e = _scalar_scaled(m)
        return math.ldexp(float(np.hypot(np.hypot(a11, a12), np.hypot(a21, a22))), e)
    return singular_values(m)[0]


def inverse(m: Mat2) -> Mat2:
    d = det(m)
    scale2 = m.a11 * m.a11 + m.a12 * m.a12 + m.a21 * m.a21 + m.a22 * m.a22
    if abs(d) <= SINGULAR_RTOL * scale2 or scale2 == 0.0:
        raise SingularMatrix(f"matrix {m} is singular (det={d!r})")
    return Mat2(m.a22 / d, -m.a12 / d, -m.a21 / d, m.a11 / d)


# ---------------------------------------------------------------------------
# batched versions on (..., 2, 2) arrays


def batch_det(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0]


def batch_adjugate(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    out = np.empty_like(a)
    out[..., 0, 0] = a[..., 1, 1]
    out[..., 0, 1] = -a[..., 0, 1]
    out[..., 1, 0] = -a[..., 1, 0]
    out[..., 1, 1] = a[..., 0, 0]
    return out


def batch_inverse(a: np.ndarray, *, check: bool = True) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    d = batch_det(a)
    if check:
        scale2 = np.sum(a * a, axis=(-2, -1))
        bad = (np.abs(d) <= SINGULAR_RTOL * scale2) | (scale2 == 0.0)
        if np.any(bad):
            raise SingularMatrix(f"{int(np.count_nonzero(bad))} singular matrices in batch")
    with np.errstate(divide="ignore", invalid="ignore"):
        return batch_adjugate(a) / d[..., None, None]


def batch_singular_values(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=float)
    return _singular_values(a[..., 0, 0], a[..., 0, 1], a[..., 1, 0], a[..., 1, 1])


def batch_norm(a: np.ndarray, kind=None) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if _kind(kind) is NormKind.FROBENIUS:
        return _frobenius(a[..., 0, 0], a[..., 0, 1], a[..., 1, 0], a[..., 1, 1])
    return batch_singular_values(a)[0]
