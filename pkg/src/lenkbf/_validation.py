"""Input validation helpers shared by the public functions and estimator."""

import numbers

import numpy as np


def check_square(A, name="A"):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"{name} must be a square 2-D array, got shape {A.shape}")
    return A


def check_same_shape(A, B, names=("A", "B")):
    if A.shape != B.shape:
        raise ValueError(
            f"dimension mismatch: {names[0]} has shape {A.shape}, "
            f"{names[1]} has shape {B.shape}"
        )


def check_positive(value, name, strict=True):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ValueError(f"{name} must be a finite real number, got {value!r}")
    if strict and value <= 0:
        raise ValueError(f"{name} must be > 0, got {value!r}")
    if not strict and value < 0:
        raise ValueError(f"{name} must be >= 0, got {value!r}")
    return float(value)


def check_state(x, n=None, name="state"):
    x = np.asarray(x, dtype=float)
    if x.ndim not in (1, 2):
        raise ValueError(f"{name} must be 1-D or 2-D, got ndim={x.ndim}")
    if n is not None and x.shape[-1] != n:
        raise ValueError(f"{name} has dimension {x.shape[-1]}, expected {n}")
    return x


def symmetrize(A):
    return 0.5 * (A + A.T)
