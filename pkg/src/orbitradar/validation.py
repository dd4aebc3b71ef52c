"""Small input-validation helpers in the spirit of ``sklearn.utils.validation``."""

import numbers

import numpy as np


def check_vec3(v, name="vector"):
    """Return ``v`` as a float array whose last axis has length 3."""
    arr = np.asarray(v, dtype=float)
    if arr.ndim == 0 or arr.shape[-1] != 3:
        raise ValueError(f"{name} must have a trailing dimension of 3, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite components")
    return arr


def check_positive(value, name):
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")
    return float(value)


def check_odd(value, name):
    if int(value) != value or value < 1 or int(value) % 2 == 0:
        raise ValueError(f"{name} must be a positive odd integer, got {value!r}")
    return int(value)


def check_complex_2d(samples, name="samples"):
    arr = np.asarray(samples)
    if arr.ndim == 1:
        arr = arr[np.newaxis, :]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 1-D or 2-D (channels x samples), got {arr.ndim}-D")
    return arr.astype(np.complex128, copy=False)
