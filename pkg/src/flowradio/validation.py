"""Input validation helpers shared by the estimators."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .core import GridShape, RadioMap


def check_maps(X, min_maps: int = 1) -> np.ndarray:
    """Validate a stack of dB maps, returning float64 ``(n, rows, cols)``."""
    if isinstance(X, RadioMap):
        X = X.values[None]
    X = check_array(X, allow_nd=True, ensure_2d=False, dtype=np.float64,
                    ensure_min_samples=min_maps)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3:
        raise ValueError(f"expected maps of shape (n, rows, cols), got {X.shape}")
    GridShape(*X.shape[1:])
    return X


def check_same_shape(expected: GridShape, got: GridShape, what: str = "input") -> None:
    if tuple(expected.as_tuple()) != tuple(got.as_tuple()):
        raise ValueError(
            f"{what} grid {got.rows}x{got.cols} does not match model grid "
            f"{expected.rows}x{expected.cols}"
        )


def check_unit_interval(x: float, name: str, open_low: bool = False, open_high: bool = False) -> float:
    x = float(x)
    lo_ok = x > 0 if open_low else x >= 0
    hi_ok = x < 1 if open_high else x <= 1
    if not (lo_ok and hi_ok and np.isfinite(x)):
        raise ValueError(f"{name}={x} outside the allowed unit interval")
    return x
