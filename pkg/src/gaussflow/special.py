"""Scalar special functions on float64, vectorized over numpy arrays.

All functions accept a Python float or an ndarray and return the same kind.
Non-finite inputs raise :class:`DomainError`.
"""

import math

import numpy as np
from scipy.special import erfc

from .errors import DomainError

# Probabilities entering the normal quantile are clamped into [EPS_P, 1 - EPS_P].
EPS_P = 1e-7

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_SQRT_2 = math.sqrt(2.0)
_SQRT_2PI = math.sqrt(2.0 * math.pi)

# Acklam's rational approximation, relative error ~1.15e-9 before refinement.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def _as_float(x):
    arr = np.asarray(x, dtype=np.float64)
    return arr, arr.ndim == 0


def _out(arr, scalar):
    return float(arr) if scalar else arr


def _require_finite(arr, name):
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name}: non-finite input")


def std_normal_cdf(x):
    """Standard normal CDF via erfc, accurate in both tails."""
    arr, scalar = _as_float(x)
    _require_finite(arr, "std_normal_cdf")
    return _out(0.5 * erfc(-arr / _SQRT_2), scalar)


def std_normal_logpdf(x):
    arr, scalar = _as_float(x)
    _require_finite(arr, "std_normal_logpdf")
    return _out(-0.5 * arr * arr - LOG_SQRT_2PI, scalar)


def _lower_tail_quantile(q):
    """Quantile for q in (0, 0.5]; result is <= 0."""
    x = np.empty_like(q)
    tail = q < _P_LOW
    if np.any(tail):
        t = np.sqrt(-2.0 * np.log(q[tail]))
        num = ((((_C[0] * t + _C[1]) * t + _C[2]) * t + _C[3]) * t + _C[4]) * t + _C[5]
        den = (((_D[0] * t + _D[1]) * t + _D[2]) * t + _D[3]) * t + 1.0
        x[tail] = num / den
    mid = ~tail
    if np.any(mid):
        s = q[mid] - 0.5
        r = s * s
        num = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * s
        den = ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
        x[mid] = num / den
    # one Halley step against the erfc-based CDF
    e = 0.5 * erfc(-x / _SQRT_2) - q
    u = e * _SQRT_2PI * np.exp(0.5 * x * x)
    x = x - u / (1.0 + 0.5 * x * u)
    return x


def std_normal_icdf(p):
    """Standard normal quantile for p in the open interval (0, 1).

    Computed on min(p, 1 - p) and reflected, so icdf(1 - p) == -icdf(p)
    whenever 1 - p is exact.
    """
    arr, scalar = _as_float(p)
    _require_finite(arr, "std_normal_icdf")
    if np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise DomainError("std_normal_icdf: p must lie in (0, 1)")
    flat = np.atleast_1d(arr).ravel()
    upper = flat > 0.5
    q = np.where(upper, 1.0 - flat, flat)
    x = _lower_tail_quantile(q)
    x = np.where(upper, -x, x)
    x[flat == 0.5] = 0.0
    return _out(x.reshape(arr.shape), scalar)


def clamp_probability(p, eps=EPS_P):
    """Clamp into [eps, 1 - eps]; also returns the mask of clamped entries."""
    arr = np.asarray(p, dtype=np.float64)
    clipped = np.clip(arr, eps, 1.0 - eps)
    return clipped, clipped != arr


def sigmoid(x):
    arr, scalar = _as_float(x)
    _require_finite(arr, "sigmoid")
    # exp of a non-positive argument only: never overflows
    e = np.exp(-np.abs(arr))
    out = np.where(arr >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _out(out, scalar)


def softplus(x):
    arr, scalar = _as_float(x)
    _require_finite(arr, "softplus")
    return _out(np.maximum(arr, 0.0) + np.log1p(np.exp(-np.abs(arr))), scalar)


def log_sigmoid(x):
    arr, scalar = _as_float(x)
    return _out(-softplus(-arr), scalar)
