"""Input validation helpers shared by the estimators and solvers."""

import numbers

import numpy as np
from sklearn.utils import check_random_state, check_scalar  # noqa: F401  (re-exported)


def check_image(x, name="x", ndim=3, allow_real=True):
    """Validate a (phase, x, y) image and return it as complex128.

    Parameters
    ----------
    x : array-like
        Image samples.
    name : str
        Name used in error messages.
    ndim : int or None
        Required number of axes, or None to accept any.
    allow_real : bool
        If False, real input raises instead of being promoted.
    """
    arr = np.asarray(x)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must have {ndim} axes, got shape {arr.shape}")
    if not allow_real and not np.iscomplexobj(arr):
        raise TypeError(f"{name} must be complex-valued")
    if not np.issubdtype(arr.dtype, np.number):
        raise TypeError(f"{name} must be numeric, got dtype {arr.dtype}")
    arr = arr.astype(np.complex128, copy=False)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_same_shape(a, b, names=("a", "b")):
    if np.shape(a) != np.shape(b):
        raise ValueError(
            f"shape mismatch: {names[0]} {np.shape(a)} vs {names[1]} {np.shape(b)}"
        )


def check_positive(value, name, strict=True):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ValueError(f"{name} must be a finite real number, got {value!r}")
    if strict and value <= 0:
        raise ValueError(f"{name} must be > 0, got {value}")
    if not strict and value < 0:
        raise ValueError(f"{name} must be >= 0, got {value}")
    return float(value)


def check_unit_interval(value, name, low_open=True, high_open=True):
    """Check ``value`` lies in (0, 1) with configurable endpoint handling."""
    v = float(value)
    lo_ok = v > 0 if low_open else v >= 0
    hi_ok = v < 1 if high_open else v <= 1
    if not (np.isfinite(v) and lo_ok and hi_ok):
        lb = "(" if low_open else "["
        rb = ")" if high_open else "]"
        raise ValueError(f"{name} must lie in {lb}0, 1{rb}, got {value}")
    return v
