import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from helix_impute.analysis import (
    _runs,
    attention_structure,
    collect_attention,
    correlation_bin_curve,
    cosine_similarity,
    embedding_structure,
    gap_length_curve,
    metrics,
    pearson,
    proximity,
    structure_report,
    write_csv,
)
from helix_impute.data import SeriesBatch
from helix_impute.errors import ContractError, DimensionError
from helix_impute.model import HelixModel, ModelConfig


def test_metrics_hand_example():
    x = np.array([1.0, -2.0, 4.0, 9.0])
    x_hat = np.array([2.0, -2.0, 1.0, 0.0])
    r = metrics(x, x_hat, np.array([1, 1, 1, 0]))
    assert (r.mae, r.mse, r.count) == (4 / 3, 10 / 3, 3)
    assert r.mre == pytest.approx(4 / 7, abs=1e-15)


def test_metrics_loop_oracle(rng):
    x, x_hat = rng.standard_normal((5, 6, 3)), rng.standard_normal((5, 6, 3))
    m = rng.random(x.shape) < 0.4
    pairs = [(a, b) for a, b, s in zip(x.ravel(), x_hat.ravel(), m.ravel()) if s]
    r = metrics(x, x_hat, m)
    assert r.mae == pytest.approx(sum(abs(b - a) for a, b in pairs) / len(pairs), rel=1e-12)
    assert r.mse == pytest.approx(sum((b - a) ** 2 for a, b in pairs) / len(pairs), rel=1e-12)
    assert r.mre == pytest.approx(sum(abs(b - a) for a, b in pairs) / sum(abs(a) for a, _ in pairs), rel=1e-12)


@given(arrays(np.float64, 12, elements=st.floats(-1e3, 1e3)), arrays(np.float64, 12, elements=st.floats(-1e3, 1e3)))
def test_mae_squared_bounded_by_mse(x, x_hat):
    r = metrics(x, x_hat, np.ones(12))
    assert r.mae**2 <= r.mse * (1 + 1e-12) + 1e-300


def test_metrics_degenerate_cases():
    r = metrics(np.zeros(3), np.ones(3), np.ones(3))
    assert math.isnan(r.mre) and not r.mre_defined and r.mae == 1.0
    with pytest.raises(ContractError):
        metrics(np.zeros(3), np.zeros(3), np.zeros(3))
    with pytest.raises(DimensionError):
        metrics(np.zeros(3), np.zeros(4), np.ones(3))
    assert metrics(np.ones(2), np.ones(2), np.ones(2)).mae == 0.0


def test_pearson_examples():
    assert pearson([1, 2, 3], [2, 4, 6]).r == pytest.approx(1.0)
    assert pearson([1, 2, 3], [3, 2, 1]).r == pytest.approx(-1.0)
    assert pearson([1, 2], [1, 2]).degenerate
    assert pearson([1, 1, 1], [1, 2, 3]).degenerate
    with pytest.raises(DimensionError):
        pearson([1, 2, 3], [1, 2])


@given(st.integers(0, 2**31), st.integers(3, 60))
def test_pearson_matches_scipy(seed, n):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal(n)
    b = 0.5 * a + rng.standard_normal(n)
    mine, ref = pearson(a, b), stats.pearsonr(a, b)
    assert mine.r == pytest.approx(ref[0], abs=1e-12)
    assert mine.p == pytest.approx(ref[1], rel=1e-8, abs=1e-14)


def test_pearson_large_offset_two_pass():
    rng = np.random.default_rng(0)
    a = rng.standard_normal(100)
    b = a + 0.1 * rng.standard_normal(100)
    assert pearson(a + 1e9, b - 1e9).r == pytest.approx(pearson(a, b).r, abs=1e-6)


@given(st.integers(0, 2**31), st.floats(0, 2 * math.pi))
def test_embedding_structure_rotation_invariant(seed, theta):
    rng = np.random.default_rng(seed)
    ids, coords = rng.standard_normal((6, 4)), rng.uniform(0, 1, (6, 2))
    rot = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    a = embedding_structure(ids, coords).r
    b = embedding_structure(ids, coords @ rot.T + 3.0).r
    assert a == pytest.approx(b, abs=1e-9)


@given(st.integers(0, 2**31))
def test_embedding_structure_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    ids, coords = rng.standard_normal((7, 3)), rng.uniform(0, 1, (7, 2))
    perm = rng.permutation(7)
    assert embedding_structure(ids[perm], coords[perm]).r == pytest.approx(embedding_structure(ids, coords).r, abs=1e-12)


def test_embedding_structure_recovers_geometry():
    coords = np.random.default_rng(1).uniform(0, 1, (10, 2))
    ids = np.concatenate([np.cos(coords * 3), np.sin(coords * 3)], axis=1)
    rep = embedding_structure(ids, coords)
    assert rep.r < -0.5 and rep.p < 0.01
    assert rep.similarity.shape == rep.distance.shape == (10, 10)


def test_zero_norm_rows_warn():
    ids = np.eye(4)
    ids[2] = 0.0
    with pytest.warns(RuntimeWarning, match="zero-norm"):
        rep = embedding_structure(ids, np.random.default_rng(0).uniform(size=(4, 2)))
    assert rep.embedding.n == 3
    sim, ok = cosine_similarity(ids)
    assert not ok[2]


def test_proximity_oracle():
    c = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]])
    P = proximity(c)
    med = np.median([1.0, 2.0, math.sqrt(5)])
    assert P[0, 1] == pytest.approx(math.exp(-1 / med))
    np.testing.assert_array_equal(np.diag(P), 1.0)


def test_attention_structure_on_proximity_matrix():
    coords = np.random.default_rng(2).uniform(0, 1, (5, 2))
    P = proximity(coords)
    A = P / P.sum(-1, keepdims=True)
    out = attention_structure([{"feature": A}], coords)
    assert len(out) == 1 and out[0].r > 0.5
    with pytest.raises(ContractError):
        attention_structure([{}], coords)
    with pytest.raises(DimensionError):
        attention_structure([{"feature": np.eye(3)}], coords)


def _model():
    return HelixModel.initialize(ModelConfig(n_features=4, n_steps=5, d_pe=4, d_f=4, d_model=8, n_heads=2, n_layers=2), 0)


def test_collect_attention_averages_all_windows(rng):
    x = rng.standard_normal((7, 5, 4))
    batch = SeriesBatch(x, np.ones_like(x))
    m = _model()
    whole = collect_attention(m, batch, batch_size=64)
    chunked = collect_attention(m, batch, batch_size=3)
    assert len(whole) == 2 and set(whole[0]) == {"feature", "feature_cross"}
    for a, b in zip(whole, chunked):
        for k in a:
            np.testing.assert_allclose(a[k], b[k], atol=1e-13)
            np.testing.assert_allclose(a[k].sum(-1), 1.0, atol=1e-12)
    rep = structure_report(m, batch, rng.uniform(size=(4, 2)))
    assert len(rep.attention) == 4


def test_runs():
    h = np.array([[1, 1, 0, 1, 1, 1, 0, 0, 1]], bool).T
    np.testing.assert_array_equal(_runs(h)[:, 0], [2, 2, 0, 3, 3, 3, 0, 0, 1])


def test_gap_length_curve_oracle():
    T = 20
    x = np.zeros((1, T, 2))
    x_hat = np.zeros_like(x)
    sel = np.zeros_like(x, bool)
    sel[0, 0:2, 0] = True  # run 2
    x_hat[0, 0:2, 0] = 1.0
    sel[0, 5:9, 0] = True  # run 4
    x_hat[0, 5:9, 0] = 2.0
    sel[0, 0:12, 1] = True  # run 12
    x_hat[0, 0:12, 1] = 3.0
    rows = {r.bucket: r for r in gap_length_curve(x, x_hat, sel)}
    assert (rows["1-2"].count, rows["1-2"].mae) == (2, 1.0)
    assert (rows["3-5"].count, rows["3-5"].mae) == (4, 2.0)
    assert rows["6-10"].count == 0 and math.isnan(rows["6-10"].mae)
    assert (rows["11+"].count, rows["11+"].mae) == (12, 3.0)


def test_correlation_bins():
    rng = np.random.default_rng(3)
    base = rng.standard_normal((400, 1))
    # features 0,1 strongly tied, 2,3 weakly, 4,5 independent
    x = np.concatenate(
        [base + 0.05 * rng.standard_normal((400, 2)), 0.5 * base + rng.standard_normal((400, 2)), rng.standard_normal((400, 2))],
        axis=1,
    )
    sel = rng.random(x.shape) < 0.3
    rows = correlation_bin_curve(x, x + 0.1, x + 0.2, sel)
    assert [r.bucket for r in rows] == ["low", "mid", "high"]
    assert rows[2].features == (0, 1) and rows[0].features == (4, 5)
    for r in rows:
        assert r.mae_model == pytest.approx(0.1) and r.improvement == pytest.approx(0.5)
    with pytest.raises(ContractError):
        correlation_bin_curve(x[:, :1], x[:, :1], x[:, :1], sel[:, :1])


def test_write_csv_round_trip(tmp_path):
    write_csv(tmp_path / "a.csv", ["k", "v"], [("x", 0.1), ("y", 1 / 3)])
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert lines == ["k,v", "x,0.1", f"y,{1/3!r}"]


def test_uniform_attention_is_degenerate():
    coords = np.random.default_rng(4).uniform(0, 1, (5, 2))
    out = attention_structure([{"feature": np.full((5, 5), 0.2)}], coords)
    assert out[0].degenerate and math.isnan(out[0].r)


def test_attention_proportional_to_proximity():
    coords = np.random.default_rng(5).uniform(0, 1, (6, 2))
    out = attention_structure([{"feature": 0.37 * proximity(coords)}], coords)
    assert out[0].r == pytest.approx(1.0, abs=1e-12)


def test_collinear_stations_with_coordinate_embeddings():
    coords = np.array([[1.0, 1.0], [2.0, 2.0], [4.0, 3.0]])
    rep = embedding_structure(coords, coords)
    assert rep.r < 0
