"""Input validation helpers shared across the toolkit.

All helpers raise ``ValueError`` with a message naming the offending
argument, so CLI entry points can map them to usage errors uniformly.
"""

from __future__ import annotations

import numpy as np
import torch


def as_float_array(x, name: str = "array") -> np.ndarray:
    """Coerce to a float64/float32 numpy array, rejecting non-finite input."""
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    arr = np.asarray(x)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float32)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_image(x, name: str = "image", square: bool = False) -> np.ndarray:
    arr = as_float_array(x, name)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if square and arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name} must be square, got shape {arr.shape}")
    return arr


def check_same_shape(a, b, name_a: str = "a", name_b: str = "b") -> None:
    sa = tuple(a.shape)
    sb = tuple(b.shape)
    if sa != sb:
        raise ValueError(f"{name_a} shape {sa} does not match {name_b} shape {sb}")


def check_angles(angles, name: str = "angles") -> np.ndarray:
    arr = np.atleast_1d(as_float_array(angles, name))
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D")
    if np.any(arr < 0.0) or np.any(arr >= 2.0 * np.pi):
        raise ValueError(f"{name} must lie in [0, 2*pi)")
    return arr


def check_positive(value, name: str) -> float:
    value = float(value)
    if not value > 0:
        raise ValueError(f"{name} must be positive, got {value}")
    return value


def check_count(value, name: str, minimum: int = 1) -> int:
    ivalue = int(value)
    if ivalue != value or ivalue < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value}")
    return ivalue
