"""Input validation helpers.

Small check functions in the spirit of sklearn's validation utilities,
shared by the numeric modules and the estimator wrappers.
"""

import numpy as np

from .errors import ConfigError


def as_float_array(x, name="x", ndim=None, allow_empty=False):
    """Coerce to a float64 ndarray and verify finiteness.

    Parameters
    ----------
    x : array-like
    name : str
        Used in error messages.
    ndim : int or None
        Required dimensionality; 1-D column vectors are accepted for
        ndim=2 and reshaped to (n, 1).
    allow_empty : bool
        Whether a zero-length array is acceptable.
    """
    arr = np.asarray(x, dtype=np.float64)
    if ndim == 2 and arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not allow_empty and arr.size == 0:
        raise ValueError(f"{name} must not be empty")
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_positive(value, name, strict=True):
    """Validate a positive scalar, returning it as float."""
    v = float(value)
    if not np.isfinite(v) or (v <= 0 if strict else v < 0):
        kind = "strictly positive" if strict else "nonnegative"
        raise ConfigError(f"{name} must be {kind}, got {value!r}")
    return v


def check_in_range(value, name, lo, hi, include_lo=False, include_hi=True):
    v = float(value)
    ok_lo = v >= lo if include_lo else v > lo
    ok_hi = v <= hi if include_hi else v < hi
    if not (np.isfinite(v) and ok_lo and ok_hi):
        lo_b = "[" if include_lo else "("
        hi_b = "]" if include_hi else ")"
        raise ConfigError(f"{name} must lie in {lo_b}{lo}, {hi}{hi_b}, got {value!r}")
    return v


def check_positive_int(value, name, minimum=1):
    v = int(value)
    if v != value or v < minimum:
        raise ConfigError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return v


def check_simplex(mass, name="mass", atol=1e-9):
    """Validate a discrete probability vector (nonnegative, sums to 1)."""
    m = as_float_array(mass, name)
    if np.any(m < 0):
        raise ValueError(f"{name} has negative entries")
    total = m.sum()
    if abs(total - 1.0) > atol:
        raise ValueError(f"{name} sums to {total!r}, expected 1 within {atol}")
    return m


def check_spd(matrix, name="matrix"):
    """Validate a symmetric positive-definite matrix via Cholesky."""
    m = as_float_array(matrix, name, ndim=2)
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got shape {m.shape}")
    if not np.allclose(m, m.T, rtol=1e-10, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    try:
        np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"{name} must be positive-definite") from exc
    return m
