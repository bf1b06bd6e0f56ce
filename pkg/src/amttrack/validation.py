"""Input validation helpers used at every public entry point."""

import numbers

import numpy as np

from .exceptions import ParameterError, ShapeError


def check_matrix(a, name="array", ndim=2):
    """Return ``a`` as a finite float64 array with ``ndim`` dimensions."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != ndim:
        raise ShapeError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ParameterError(f"{name} contains NaN or Inf")
    return arr


def check_vector(v, name="vector"):
    return check_matrix(v, name=name, ndim=1)


def check_beta(beta):
    """Inverse temperature must be a finite positive real."""
    if isinstance(beta, bool) or not isinstance(beta, numbers.Real):
        raise ParameterError(f"beta must be a real number, got {beta!r}")
    beta = float(beta)
    if not np.isfinite(beta) or beta <= 0.0:
        raise ParameterError(f"beta must be > 0, got {beta}")
    return beta


def check_positive_int(value, name):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < 1:
        raise ParameterError(f"{name} must be an integer >= 1, got {value!r}")
    return int(value)


def check_unit_interval(value, name):
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ParameterError(f"{name} must lie in [0, 1], got {value}")
    return value


def check_same_cols(a, b, a_name, b_name):
    if a.shape[1] != b.shape[1]:
        raise ShapeError(
            f"{a_name} {a.shape} and {b_name} {b.shape} differ in column count"
        )
