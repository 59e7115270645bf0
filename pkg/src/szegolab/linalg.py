"""Finite Toeplitz and Hankel sections, determinants and matrix norms.

Matrices are plain complex ``numpy`` arrays. Determinants are returned as
:class:`LogDet` so that sizes in the hundreds never overflow.
"""

from __future__ import annotations

import hashlib
import math
from typing import NamedTuple

import numpy as np
from scipy.linalg import hankel, toeplitz

from .errors import NumericError, ValidationError
from .symbols import LaurentSeries

__all__ = [
    "LogDet",
    "toeplitz_matrix",
    "hankel_matrix",
    "hankel_product_block",
    "HankelBlock",
    "flip_conjugate",
    "log_det",
    "fredholm_log_det",
    "det2",
    "matrix_norms",
    "MatrixNorms",
    "hankel_tail_hs",
]


def _wrap(phase: float) -> float:
    """Map an angle into (-pi, pi]."""
    p = math.remainder(phase, 2 * math.pi)
    return math.pi if p == -math.pi else p


class LogDet(NamedTuple):
    log_modulus: float
    phase: float

    @classmethod
    def from_complex(cls, z: complex) -> "LogDet":
        if z == 0:
            return cls(-math.inf, 0.0)
        return cls(math.log(abs(z)), _wrap(math.atan2(z.imag, z.real)))

    @classmethod
    def from_log(cls, logz: complex) -> "LogDet":
        return cls(float(logz.real), _wrap(float(logz.imag)))

    @property
    def value(self) -> complex:
        if self.log_modulus == -math.inf:
            return 0j
        return math.exp(self.log_modulus) * complex(math.cos(self.phase), math.sin(self.phase))

    @property
    def is_zero(self) -> bool:
        return self.log_modulus == -math.inf

    def __mul__(self, other: "LogDet") -> "LogDet":
        return LogDet(self.log_modulus + other.log_modulus, _wrap(self.phase + other.phase))

    def __truediv__(self, other: "LogDet") -> "LogDet":
        return LogDet(self.log_modulus - other.log_modulus, _wrap(self.phase - other.phase))

    def log(self) -> complex:
        return complex(self.log_modulus, self.phase)

    def rel_distance(self, other: "LogDet") -> float:
        """|self - other| / |self| computed without forming either value."""
        if self.is_zero:
            return 0.0 if other.is_zero else math.inf
        if other.is_zero:
            return 1.0
        d = complex(other.log_modulus - self.log_modulus, _wrap(other.phase - self.phase))
        return abs(np.expm1(d))


def _finite(mat: np.ndarray, name: str = "matrix") -> np.ndarray:
    mat = np.asarray(mat, dtype=complex)
    if not np.all(np.isfinite(mat)):
        raise ValidationError(f"{name} has non-finite entries")
    return mat


def toeplitz_matrix(c: LaurentSeries, n: int) -> np.ndarray:
    """T_n(c): entry (j, l) equals c_{j-l}."""
    if n < 1:
        raise ValidationError(f"n must be positive, got {n}")
    col = c.dense(0, n - 1)
    row = c.dense(-(n - 1), 0)[::-1]
    return toeplitz(col, row)


def hankel_matrix(c: LaurentSeries, rows: int, cols: int, shift: int = 0) -> np.ndarray:
    """Block of H(c) with entry (j, l) = c_{j+l-1+shift}, 1 <= j <= rows, 1 <= l <= cols."""
    coeffs = c.dense(shift + 1, shift + rows + cols - 1)
    return hankel(coeffs[:rows], coeffs[rows - 1:])


def hankel_tail_hs(c: LaurentSeries, start: int) -> float:
    """sqrt(sum_{k > start} (k - start) |c_k|^2), the HS norm of Q_start H(c)."""
    return math.sqrt(math.fsum((k - start) * abs(v) ** 2 for k, v in c.coeffs.items() if k > start))


class HankelBlock(NamedTuple):
    matrix: np.ndarray
    tail_bound: float


def hankel_product_block(
    phi: LaurentSeries, psi: LaurentSeries, offset: int, size: int, inner_cut: int
) -> HankelBlock:
    """Finite section of Q_n H(phi) H(psi) Q_n.

    Entry (j, l), for j, l in [offset+1, offset+size], is
    sum_{m=1}^{inner_cut} phi_{j+m-1} psi_{m+l-1}. The tail bound is a
    trace-norm bound on what the row, column and inner truncations omit.
    """
    if size < 1 or inner_cut < 1:
        raise ValidationError("size and inner_cut must be positive")
    A = hankel_matrix(phi, size, inner_cut, shift=offset)
    B = hankel_matrix(psi, inner_cut, size, shift=offset)
    K = A @ B
    n = offset
    full_a, full_b = hankel_tail_hs(phi, n), hankel_tail_hs(psi, n)
    tail = (
        hankel_tail_hs(phi, n + size) * full_b
        + full_a * hankel_tail_hs(psi, n + size)
        + hankel_tail_hs(phi, n + inner_cut) * hankel_tail_hs(psi, n + inner_cut)
    )
    return HankelBlock(K, tail)


def flip_conjugate(mat: np.ndarray) -> np.ndarray:
    """W_n M W_n: entry (j, l) moves to (n+1-j, n+1-l)."""
    mat = np.asarray(mat)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValidationError(f"flip_conjugate needs a square matrix, got shape {mat.shape}")
    return mat[::-1, ::-1].copy()


def _square(mat, name="matrix") -> np.ndarray:
    mat = _finite(mat, name)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValidationError(f"{name} must be square, got shape {mat.shape}")
    return mat


def log_det(mat: np.ndarray) -> LogDet:
    """Determinant via LU with partial pivoting; singular gives log_modulus -inf."""
    mat = _square(mat)
    if mat.shape[0] == 0:
        return LogDet(0.0, 0.0)
    sign, logabs = np.linalg.slogdet(mat)
    if sign == 0:
        return LogDet(-math.inf, 0.0)
    return LogDet(float(logabs), _wrap(math.atan2(sign.imag, sign.real)))


def _log1p_complex(lam: np.ndarray) -> np.ndarray:
    """log(1 + lam) accurate for small |lam|."""
    re, im = lam.real, lam.imag
    mod = 0.5 * np.log1p(2 * re + re * re + im * im)
    return mod + 1j * np.arctan2(im, 1 + re)


def _log_det_identity_plus(A: np.ndarray) -> complex:
    """log det(I + A); uses eigenvalues when A is small so det - 1 keeps its digits."""
    if A.shape[0] == 0:
        return 0j
    if np.linalg.norm(A) < 0.5 and A.shape[0] <= 1024:
        lam = np.linalg.eigvals(A)
        return complex(_log1p_complex(lam).sum())
    ld = log_det(np.eye(A.shape[0]) + A)
    return ld.log()


def fredholm_log_det(K: np.ndarray) -> LogDet:
    """det(I - K) for a finite kernel section."""
    K = _square(K, "kernel")
    logz = _log_det_identity_plus(-K)
    if not math.isfinite(logz.real):
        return LogDet(-math.inf, 0.0)
    return LogDet.from_log(logz)


class Det2(NamedTuple):
    value: complex
    bound: float


def det2(A: np.ndarray) -> Det2:
    """Regularized determinant det_2(I + A) = exp(-tr A) det(I + A).

    ``bound`` is ||A||_2 exp((||A||_2 + 1)^2 / 2), the right-hand side of the
    estimate |det_2(I + A) - 1| <= bound valid for all Hilbert-Schmidt A.
    """
    A = _square(A)
    hs = float(np.linalg.norm(A))
    logz = _log_det_identity_plus(A) - complex(np.trace(A))
    if not math.isfinite(logz.real):
        value = 0j
    else:
        value = complex(np.exp(logz))
    bound = hs * math.exp(0.5 * (hs + 1.0) ** 2) if hs else 0.0
    return Det2(value, bound)


class MatrixNorms(NamedTuple):
    op: float
    hs: float
    trace: float


def _fingerprint(mat: np.ndarray) -> str:
    return hashlib.sha1(np.ascontiguousarray(mat).tobytes()).hexdigest()[:12]


def matrix_norms(mat: np.ndarray) -> MatrixNorms:
    """Operator, Hilbert-Schmidt and trace norms from a full SVD."""
    mat = _finite(mat)
    if mat.size == 0:
        return MatrixNorms(0.0, 0.0, 0.0)
    try:
        s = np.linalg.svd(mat, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"SVD did not converge: {exc}", fingerprint=_fingerprint(mat)) from exc
    return MatrixNorms(float(s[0]), float(np.sqrt(np.sum(s ** 2))), float(np.sum(s)))
