"""Input validation helpers shared by the estimator-facing API."""

from __future__ import annotations

import numpy as np

from .exceptions import InputError, ShapeError

NUM_CLASSES = 10


def check_window_array(X, n_channels: int, window_len: int | None = None,
                       name: str = "X") -> np.ndarray:
    """Validate a window batch and return it as a float64 array.

    Accepts shape (n, T, n_channels); a single-channel input may also be
    given as (n, T).  Values must be finite.
    """
    X = np.asarray(X, dtype=np.float64)
    if n_channels == 1 and X.ndim == 2:
        X = X[:, :, None]
    if X.ndim != 3:
        raise ShapeError(f"{name} must be 3-dimensional (n, time, channels), "
                         f"got shape {X.shape}")
    if X.shape[2] != n_channels:
        raise ShapeError(f"{name} must have {n_channels} channel(s), "
                         f"got {X.shape[2]}")
    if window_len is not None and X.shape[1] != window_len:
        raise ShapeError(f"{name} windows must have length {window_len}, "
                         f"got {X.shape[1]}")
    if not np.isfinite(X).all():
        raise InputError(f"{name} contains non-finite values")
    return X


def check_label_array(y, n_rows: int | None = None,
                      name: str = "y") -> np.ndarray:
    """Validate integer class labels in [0, NUM_CLASSES)."""
    y = np.asarray(y)
    if y.ndim != 1:
        raise ShapeError(f"{name} must be 1-dimensional, got shape {y.shape}")
    if y.shape[0] and not np.issubdtype(y.dtype, np.integer):
        rounded = np.round(np.asarray(y, dtype=np.float64))
        if not np.array_equal(rounded, np.asarray(y, dtype=np.float64)):
            raise InputError(f"{name} must contain integer class ids")
        y = rounded
    y = y.astype(np.int64)
    if y.shape[0] and (y.min() < 0 or y.max() >= NUM_CLASSES):
        raise InputError(f"{name} must lie in [0, {NUM_CLASSES})")
    if n_rows is not None and y.shape[0] != n_rows:
        raise ShapeError(f"{name} has {y.shape[0]} rows, expected {n_rows}")
    return y
