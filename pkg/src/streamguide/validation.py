"""Input validation helpers shared by the estimator-style classes."""

from __future__ import annotations

import numbers

import numpy as np


def check_array(x, name="x", ndim=None, dtype=np.float64):
    """Coerce ``x`` to a contiguous float64 array and validate its rank/finiteness."""
    arr = np.ascontiguousarray(x, dtype=dtype)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_scalar(x, name="x", low=None, high=None, include_low=True, include_high=True):
    if not isinstance(x, numbers.Real) or isinstance(x, bool):
        raise TypeError(f"{name} must be a real number, got {type(x).__name__}")
    v = float(x)
    if not np.isfinite(v):
        raise ValueError(f"{name} must be finite")
    if low is not None and (v < low or (not include_low and v == low)):
        raise ValueError(f"{name}={v} below allowed minimum {low}")
    if high is not None and (v > high or (not include_high and v == high)):
        raise ValueError(f"{name}={v} above allowed maximum {high}")
    return v


def check_random_state(seed) -> np.random.Generator:
    """Turn an int seed or Generator into a ``numpy.random.Generator``."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None or isinstance(seed, (int, np.integer)):
        return np.random.Generator(np.random.PCG64(seed))
    raise TypeError(f"cannot derive a random generator from {seed!r}")
