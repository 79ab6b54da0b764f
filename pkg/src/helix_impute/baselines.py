"""Naive imputation baselines: feature mean, feature median, LOCF and linear interpolation.

All functions take ``values`` and ``mask`` shaped ``[T,F]`` or ``[N,T,F]``
(time on the second-to-last axis), fill entries where ``mask`` is 0 and pass
observed entries through unchanged.
"""

import math
import warnings
from enum import Enum

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .errors import ConfigError
from .validation import check_series, check_values_mask


class BaselineKind(str, Enum):
    MEAN = "mean"
    MEDIAN = "median"
    LOCF = "locf"
    LINEAR = "linear"


def _warn_empty(features, where=""):
    if len(features):
        warnings.warn(
            f"features {[int(f) for f in features]} have no observations{where}; filled with 0",
            RuntimeWarning,
            stacklevel=3,
        )


def feature_statistic(values, mask, kind):
    """Per-feature mean or median over observed entries; NaN where a feature is never observed."""
    values, mask = check_values_mask(values, mask)
    F = values.shape[-1]
    flat_v = values.reshape(-1, F)
    flat_m = mask.reshape(-1, F) > 0
    out = np.full(F, np.nan)
    for f in range(F):
        obs = flat_v[flat_m[:, f], f]
        if obs.size:
            # fsum rounds once, so the mean does not depend on summation order
            out[f] = math.fsum(obs) / obs.size if kind == "mean" else np.median(obs)
    return out


def _fill_constant(values, mask, stats):
    stats = np.asarray(stats, dtype=np.float64)
    missing = np.flatnonzero(~np.isfinite(stats))
    _warn_empty(missing)
    fill = np.where(np.isfinite(stats), stats, 0.0)
    return np.where(mask > 0, values, fill)


def impute_mean(values, mask, stats=None):
    """Fill gaps with the feature mean (of ``values`` itself unless train-split ``stats`` are given)."""
    values, mask = check_values_mask(values, mask)
    if stats is None:
        stats = feature_statistic(values, mask, "mean")
    return _fill_constant(values, mask, stats)


def impute_median(values, mask, stats=None):
    values, mask = check_values_mask(values, mask)
    if stats is None:
        stats = feature_statistic(values, mask, "median")
    return _fill_constant(values, mask, stats)


def _per_series(values, mask, fill_one):
    """Apply ``fill_one(t_obs, v_obs, T)`` to every (window, feature) column."""
    squeeze = values.ndim == 2
    v = values[None] if squeeze else values
    m = mask[None] if squeeze else mask
    out = np.where(m > 0, v, 0.0)
    N, T, F = v.shape
    empty = set()
    for n in range(N):
        for f in range(F):
            obs = m[n, :, f] > 0
            if obs.all():
                continue
            if not obs.any():
                empty.add(f)
                continue
            t_obs = np.flatnonzero(obs)
            out[n, :, f] = np.where(obs, v[n, :, f], fill_one(t_obs, v[n, t_obs, f], T))
    _warn_empty(sorted(empty), " in at least one window")
    return out[0] if squeeze else out


def _locf_column(t_obs, v_obs, T):
    # index of the latest observation at or before each step; NOCB before the first
    pos = np.searchsorted(t_obs, np.arange(T), side="right") - 1
    return v_obs[np.maximum(pos, 0)]


def impute_locf(values, mask):
    """Carry the last observation forward; leading gaps take the first observation."""
    values, mask = check_values_mask(values, mask)
    return _per_series(values, mask, _locf_column)


def _linear_column(t_obs, v_obs, T):
    # np.interp extends flat beyond the first/last observation
    return np.interp(np.arange(T, dtype=np.float64), t_obs.astype(np.float64), v_obs)


def impute_linear(values, mask):
    """Straight lines between neighbouring observations, flat beyond the ends."""
    values, mask = check_values_mask(values, mask)
    return _per_series(values, mask, _linear_column)


def impute_baseline(kind, values, mask, stats=None):
    kind = BaselineKind(kind) if not isinstance(kind, BaselineKind) else kind
    if kind is BaselineKind.MEAN:
        return impute_mean(values, mask, stats)
    if kind is BaselineKind.MEDIAN:
        return impute_median(values, mask, stats)
    if kind is BaselineKind.LOCF:
        return impute_locf(values, mask)
    return impute_linear(values, mask)


class BaselineImputer(TransformerMixin, BaseEstimator):
    """Scikit-learn style wrapper; input is ``[N,T,F]`` (or ``[T,F]``) with NaN for missing.

    ``fit`` only matters for ``mean``/``median``, whose statistics are taken
    from the data passed to it (the training split).
    """

    def __init__(self, kind="linear"):
        self.kind = kind

    def fit(self, X, y=None):
        if self.kind not in {k.value for k in BaselineKind}:
            raise ConfigError(f"unknown baseline {self.kind!r}")
        X, mask = check_series(X)
        self.n_features_in_ = X.shape[-1]
        if self.kind in ("mean", "median"):
            self.statistics_ = feature_statistic(X, mask, self.kind)
        else:
            self.statistics_ = None
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        X, mask = check_series(X, n_features=self.n_features_in_)
        return impute_baseline(self.kind, X, mask, self.statistics_)
