"""Input validation shared by the estimators, baselines and CLI."""

import numpy as np

from .errors import DimensionError


def check_values_mask(values, mask):
    """Coerce ``values``/``mask`` to float64 arrays of the same ``[T,F]`` or ``[N,T,F]`` shape."""
    values = np.asarray(values, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if values.ndim not in (2, 3):
        raise DimensionError(f"expected [T,F] or [N,T,F] data, got shape {values.shape}")
    if mask.shape != values.shape:
        raise DimensionError(f"mask shape {mask.shape} != values shape {values.shape}")
    return np.where(mask > 0, np.nan_to_num(values), 0.0), (mask > 0).astype(np.float64)


def check_series(X, n_features=None, ndim=(2, 3)):
    """Validate NaN-marked data and return ``(zero_filled_values, mask)``.

    Infinite entries are rejected; NaN means missing.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim not in ndim:
        raise DimensionError(f"expected an array with ndim in {ndim}, got shape {X.shape}")
    if np.isinf(X).any():
        raise ValueError("input contains infinite values")
    if n_features is not None and X.shape[-1] != n_features:
        raise DimensionError(f"X has {X.shape[-1]} features, expected {n_features}")
    mask = np.isfinite(X)
    return np.where(mask, X, 0.0), mask.astype(np.float64)


def as_windows(X):
    """Promote ``[T,F]`` to ``[1,T,F]``; return the array and whether it was promoted."""
    X = np.asarray(X)
    if X.ndim == 2:
        return X[None], True
    return X, False
