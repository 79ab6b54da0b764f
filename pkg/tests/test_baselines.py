from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st
from sklearn.base import clone

from helix_impute.baselines import (
    BaselineImputer,
    feature_statistic,
    impute_baseline,
    impute_linear,
    impute_locf,
    impute_mean,
    impute_median,
)
from helix_impute.errors import ConfigError, DimensionError


def col(values, observed):
    v = np.asarray(values, float)[:, None]
    m = np.asarray(observed, float)[:, None]
    return v, m


def test_hand_examples():
    v, m = col([0, 2, 0, 0, 8, 0], [0, 1, 0, 0, 1, 0])
    np.testing.assert_array_equal(impute_linear(v, m)[:, 0], [2, 2, 4, 6, 8, 8])
    np.testing.assert_array_equal(impute_locf(v, m)[:, 0], [2, 2, 2, 2, 8, 8])
    np.testing.assert_array_equal(impute_mean(v, m)[:, 0], [5, 2, 5, 5, 8, 5])
    v, m = col([1, 0, 3, 10], [1, 0, 1, 1])
    np.testing.assert_array_equal(impute_median(v, m)[:, 0], [1, 3, 3, 10])


def _loop_linear(v, obs):
    T = len(v)
    idx = [t for t in range(T) if obs[t]]
    out = []
    for t in range(T):
        if obs[t]:
            out.append(v[t])
        elif t < idx[0]:
            out.append(v[idx[0]])
        elif t > idx[-1]:
            out.append(v[idx[-1]])
        else:
            lo = max(i for i in idx if i < t)
            hi = min(i for i in idx if i > t)
            slope = (v[hi] - v[lo]) / (hi - lo)
            out.append(slope * (t - lo) + v[lo])
    return out


def _loop_locf(v, obs):
    first = next(t for t in range(len(v)) if obs[t])
    out, last = [], v[first]
    for t in range(len(v)):
        if obs[t]:
            last = v[t]
        out.append(last)
    return out


def _loop_stat(v, obs, kind):
    vals = sorted(v[t] for t in range(len(v)) if obs[t])
    if kind == "mean":
        return float(sum(Fraction(x) for x in vals)) / len(vals)
    k = len(vals)
    return vals[k // 2] if k % 2 else 0.5 * (vals[k // 2 - 1] + vals[k // 2])


def _random_series(n, T, seed):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((n, T, 1))
    m = (rng.random((n, T, 1)) < rng.uniform(0.2, 0.9, (n, 1, 1))).astype(float)
    m[np.arange(n), rng.integers(T, size=n), 0] = 1.0  # at least one observation
    return v, m


def test_brute_force_oracles_1000_series():
    v, m = _random_series(1000, 15, 0)
    lin, locf = impute_linear(v, m), impute_locf(v, m)
    for n in range(1000):
        vs, obs = list(v[n, :, 0]), list(m[n, :, 0] > 0)
        np.testing.assert_array_equal(lin[n, :, 0], _loop_linear(vs, obs))
        np.testing.assert_array_equal(locf[n, :, 0], _loop_locf(vs, obs))
        for kind, fn in (("mean", impute_mean), ("median", impute_median)):
            got = fn(v[n], m[n])[:, 0]
            ref = _loop_stat(vs, obs, kind)
            np.testing.assert_array_equal(got[~np.array(obs)], ref)


@given(st.integers(-320, 320), st.integers(-320, 320), st.integers(0, 2**31))
def test_linear_exact_on_affine_interior(a, b, seed):
    rng = np.random.default_rng(seed)
    T = 20
    # multiples of 1/64 make the affine ground truth exactly representable
    v = (a / 64 * np.arange(T) + b / 64)[:, None]
    m = (rng.random((T, 1)) < 0.4).astype(float)
    m[0] = m[-1] = 1.0
    np.testing.assert_array_equal(impute_linear(v * m, m), v)


@pytest.mark.parametrize("kind", ["mean", "median", "locf", "linear"])
def test_idempotent_and_observed_passthrough(kind):
    v, m = _random_series(20, 10, 1)
    once = impute_baseline(kind, v, m)
    np.testing.assert_array_equal(once[m > 0], v[m > 0])
    np.testing.assert_array_equal(impute_baseline(kind, once, np.ones_like(m)), once)


def test_locf_values_are_observations():
    v, m = _random_series(50, 12, 2)
    out = impute_locf(v, m)
    for n in range(50):
        assert set(out[n, :, 0]) <= set(v[n, m[n, :, 0] > 0, 0])


def test_fully_missing_feature_warns_and_zero_fills():
    v = np.ones((4, 2))
    m = np.array([[1, 0]] * 4, float)
    for fn in (impute_mean, impute_linear):
        with pytest.warns(RuntimeWarning, match=r"features \[1\]"):
            out = fn(v, m)
        np.testing.assert_array_equal(out[:, 1], 0.0)
    assert np.isnan(feature_statistic(v, m, "mean")[1])


def test_external_statistics_are_used():
    v, m = col([0, 5], [0, 1])
    np.testing.assert_array_equal(impute_mean(v, m, stats=[-1.0])[:, 0], [-1, 5])


def test_shape_errors():
    with pytest.raises(DimensionError):
        impute_linear(np.zeros(3), np.ones(3))
    with pytest.raises(DimensionError):
        impute_linear(np.zeros((3, 2)), np.ones((3, 1)))


def test_estimator_api():
    X = np.random.default_rng(0).standard_normal((5, 6, 3))
    X[0, 2, 1] = np.nan
    X[3, 0, 0] = np.nan
    est = BaselineImputer(kind="mean").fit(X[:3])
    out = est.transform(X)
    assert np.all(np.isfinite(out))
    assert out[0, 2, 1] == pytest.approx(np.nanmean(X[:3, :, 1]))
    assert clone(est).get_params() == {"kind": "mean"}
    np.testing.assert_array_equal(BaselineImputer("linear").fit_transform(X)[~np.isnan(X)], X[~np.isnan(X)])
    with pytest.raises(ConfigError):
        BaselineImputer("spline").fit(X)
    with pytest.raises(DimensionError):
        est.transform(X[..., :2])
    with pytest.raises(ValueError):
        est.transform(np.full((1, 2, 3), np.inf))
