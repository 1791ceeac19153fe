"""Small dense symmetric-matrix helpers.

Everything here works on tiny matrices (dimension 1 to 6). Dimensions 1 and 2
use closed forms, larger ones fall back to LAPACK through ``numpy.linalg``.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .errors import InvalidInputError, SingularMatrixError

SYMMETRY_RTOL = 1e-9
# Eigenvalues in [-NEG_CLAMP, 0) are treated as roundoff and reported as 0.
NEG_CLAMP = 1e-10
PD_FLOOR = 1e-12


class EigExtremes(NamedTuple):
    lambda_min: float
    lambda_max: float


def as_symmetric(m) -> np.ndarray:
    """Validate ``m`` and return the average of it and its transpose."""
    m = np.asarray(m, dtype=float)
    if m.ndim < 2:
        m = np.atleast_2d(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidInputError(f"expected a square matrix, got shape {m.shape}")
    if m.shape[0] <= 2:
        return _as_symmetric_small(m)
    if not np.isfinite(m).all():
        raise InvalidInputError("matrix has non-finite entries")
    scale = max(1.0, float(np.abs(m).max())) if m.size else 1.0
    if np.abs(m - m.T).max(initial=0.0) > SYMMETRY_RTOL * scale:
        raise InvalidInputError("matrix is not symmetric")
    return 0.5 * (m + m.T)


def _as_symmetric_small(m: np.ndarray) -> np.ndarray:
    # scalar arithmetic is several times faster than ufunc reductions at n <= 2
    vals = m.ravel().tolist()
    if not all(math.isfinite(v) for v in vals):
        raise InvalidInputError("matrix has non-finite entries")
    if len(vals) == 1:
        return m.reshape(1, 1).copy()
    a, b, c, d = vals
    scale = max(1.0, abs(a), abs(b), abs(c), abs(d))
    if abs(b - c) > SYMMETRY_RTOL * scale:
        raise InvalidInputError("matrix is not symmetric")
    off = 0.5 * (b + c)
    return np.array([[a, off], [off, d]])


def _clamp_small_negative(x: float) -> float:
    if -NEG_CLAMP <= x < 0.0:
        return 0.0
    return x


def _eig2(a: float, b: float, d: float) -> tuple[float, float]:
    if b == 0.0:
        return (a, d) if a <= d else (d, a)
    mean = 0.5 * (a + d)
    radius = math.hypot(0.5 * (a - d), b)
    hi = mean + radius
    lo = mean - radius
    if hi > 0.0 and lo > 0.0:
        # det / hi keeps relative accuracy for a tiny positive lo
        lo = (a * d - b * b) / hi
    return lo, hi


def _raw_extremes(s: np.ndarray) -> tuple[float, float]:
    n = s.shape[0]
    if n == 1:
        lo = hi = float(s[0, 0])
    elif n == 2:
        lo, hi = _eig2(s[0, 0], s[0, 1], s[1, 1])
    elif not np.any(s - np.diag(np.diag(s))):
        d = np.diag(s)
        lo, hi = float(d.min()), float(d.max())
    else:
        w = np.linalg.eigvalsh(s)
        lo, hi = float(w[0]), float(w[-1])
    return lo, hi


def eig_extremes(m) -> EigExtremes:
    """Smallest and largest eigenvalue of a symmetric matrix."""
    lo, hi = _raw_extremes(as_symmetric(m))
    return EigExtremes(_clamp_small_negative(lo), max(hi, _clamp_small_negative(lo)))


def lambda_min(m) -> float:
    return eig_extremes(m).lambda_min


def lambda_max(m) -> float:
    return eig_extremes(m).lambda_max


def invert_pd(m) -> np.ndarray:
    """Inverse of a symmetric positive definite matrix.

    Raises SingularMatrixError when the smallest eigenvalue is at or below
    1e-12.
    """
    s = as_symmetric(m)
    lo = eig_extremes(s).lambda_min
    if not lo > PD_FLOOR:
        raise SingularMatrixError(f"matrix is not positive definite (lambda_min={lo:g})")
    n = s.shape[0]
    if n == 1:
        return np.array([[1.0 / s[0, 0]]])
    if n == 2:
        a, b, d = s[0, 0], s[0, 1], s[1, 1]
        det = a * d - b * b
        return np.array([[d, -b], [-b, a]]) / det
    inv = np.linalg.inv(s)
    return 0.5 * (inv + inv.T)


def is_psd(m, tol: float = NEG_CLAMP) -> bool:
    return eig_extremes(m).lambda_min >= -tol


def spectral_norm_sq(f) -> float:
    """Largest eigenvalue of F F', i.e. the squared largest singular value.

    For symmetric PSD ``f`` this equals the squared largest eigenvalue.
    """
    f = np.atleast_2d(np.asarray(f, dtype=float))
    return eig_extremes(f @ f.T).lambda_max


def project_psd(m) -> np.ndarray:
    """Symmetrize a covariance and floor roundoff-negative eigenvalues.

    Eigenvalues below -1e-10 raise InvalidInputError; the ones in
    [-1e-10, 0) are lifted to zero.
    """
    s = as_symmetric(m)
    lo = _raw_extremes(s)[0]
    if lo < -NEG_CLAMP:
        raise InvalidInputError(f"matrix is not PSD (lambda_min={lo:g})")
    if lo >= 0.0:
        return s
    w, v = np.linalg.eigh(s)
    w = np.where(w < 0.0, 0.0, w)
    out = (v * w) @ v.T
    return 0.5 * (out + out.T)


def batch_eig_extremes(stack) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ``eig_extremes`` over a stack of symmetric matrices.

    No symmetry validation; callers pass matrices they built symmetric.
    """
    s = np.asarray(stack, dtype=float)
    n = s.shape[-1]
    if n == 1:
        lo = s[..., 0, 0].copy()
        hi = lo.copy()
    elif n == 2:
        a, d = s[..., 0, 0], s[..., 1, 1]
        b = 0.5 * (s[..., 0, 1] + s[..., 1, 0])
        mean = 0.5 * (a + d)
        radius = np.hypot(0.5 * (a - d), b)
        hi = mean + radius
        lo = mean - radius
        both = (hi > 0.0) & (lo > 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            lo = np.where(both, (a * d - b * b) / np.where(both, hi, 1.0), lo)
        diag = b == 0.0
        lo = np.where(diag, np.minimum(a, d), lo)
        hi = np.where(diag, np.maximum(a, d), hi)
    else:
        w = np.linalg.eigvalsh(0.5 * (s + np.swapaxes(s, -1, -2)))
        lo, hi = w[..., 0], w[..., -1]
    lo = np.where((lo >= -NEG_CLAMP) & (lo < 0.0), 0.0, lo)
    return lo, np.maximum(hi, lo)
