import numpy as np
import pytest

from helix_impute.autograd import Tensor, grad_check, layer_norm, linear
from helix_impute.data import SeriesBatch
from helix_impute.encoder import (
    LayerTrace,
    axis_attention,
    forward,
    gated_fusion,
    helix_layer,
    multi_level_fusion,
    serial_layer,
)
from helix_impute.errors import ContractError, DimensionError
from helix_impute.model import VARIANTS, HelixModel, ModelConfig
from helix_impute.rng import stream
from helix_impute.training import make_artificial_mask, mit_loss


def small_model(variant="full", seed=0, **kw):
    base = dict(n_features=3, n_steps=4, d_pe=4, d_f=4, d_model=8, n_heads=2, n_layers=1, variant=variant)
    base.update(kw)
    return HelixModel.initialize(ModelConfig(**base), seed)


def random_batch(B, T, F, seed=0, p_obs=0.7):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((B, T, F))
    m = (rng.random((B, T, F)) < p_obs).astype(float)
    return SeriesBatch(x * m, m, x)


def rand_params(d, seed=0, scale=0.5):
    rng = np.random.default_rng(seed)
    p = {k: Tensor(rng.standard_normal((d, d)) * scale) for k in ("wq", "wk", "wv", "wo")}
    for k in ("bq", "bv", "bo", "ln_beta"):
        p[k] = Tensor(rng.standard_normal(d) * 0.1)
    p["ln_gamma"] = Tensor(1.0 + rng.standard_normal(d) * 0.1)
    return p


def test_single_key_attention_is_linear_path():
    d = 4
    p = rand_params(d, 1)
    h = Tensor(np.random.default_rng(2).standard_normal((2, 1, 3, d)))
    out = axis_attention(h, "temporal", p, n_heads=2).data
    inner = linear(linear(h, p["wv"], p["bv"]), p["wo"], p["bo"])
    ref = layer_norm(h + inner, p["ln_gamma"], p["ln_beta"]).data
    np.testing.assert_allclose(out, ref, atol=1e-12, rtol=0)


def test_feature_attention_permutation_equivariant():
    d = 6
    p = rand_params(d, 3)
    h = np.random.default_rng(4).standard_normal((2, 3, 5, d))
    perm = np.array([3, 0, 4, 2, 1])
    a = axis_attention(Tensor(h[:, :, perm]), "feature", p, n_heads=3).data
    b = axis_attention(Tensor(h), "feature", p, n_heads=3).data[:, :, perm]
    np.testing.assert_allclose(a, b, atol=1e-12, rtol=0)


def _single_head(x, wq, wk, wv):
    """Plain single-head attention over axis -2 of ``x`` ``[..., S, d]``."""
    q, k, v = x @ wq, x @ wk, x @ wv
    s = q @ np.swapaxes(k, -1, -2) / np.sqrt(wq.shape[1])
    e = np.exp(s - s.max(-1, keepdims=True))
    return (e / e.sum(-1, keepdims=True)) @ v


@pytest.mark.parametrize("axis", ["temporal", "feature"])
def test_multi_head_equals_per_head_oracle(axis):
    d, H = 8, 4
    dk = d // H
    p = rand_params(d, 5)
    p["bq"] = Tensor(np.zeros(d))
    p["bv"] = Tensor(np.zeros(d))
    x = np.random.default_rng(6).standard_normal((2, 5, 3, d))
    out = axis_attention(Tensor(x), axis, p, n_heads=H).data
    seq = np.swapaxes(x, 1, 2) if axis == "temporal" else x  # [..., S, d]
    heads = [
        _single_head(seq, p["wq"].data[:, h * dk : (h + 1) * dk], p["wk"].data[:, h * dk : (h + 1) * dk], p["wv"].data[:, h * dk : (h + 1) * dk])
        for h in range(H)
    ]
    ctx = np.concatenate(heads, axis=-1)
    ctx = np.swapaxes(ctx, 1, 2) if axis == "temporal" else ctx
    z = x + ctx @ p["wo"].data + p["bo"].data
    mu = z.mean(-1, keepdims=True)
    var = ((z - mu) ** 2).mean(-1, keepdims=True)
    ref = (z - mu) / np.sqrt(var + 1e-5) * p["ln_gamma"].data + p["ln_beta"].data
    np.testing.assert_allclose(out, ref, atol=1e-10, rtol=0)


def test_axis_attention_head_mismatch():
    with pytest.raises(DimensionError):
        axis_attention(Tensor(np.zeros((1, 2, 2, 6))), "feature", rand_params(6), n_heads=4)


def test_helix_layer_fusion_and_stage_order():
    m = small_model()
    h = Tensor(np.random.default_rng(0).standard_normal((2, 4, 3, 8)))
    out, tr = helix_layer(h, m, 0)
    mean4 = (tr.H_T.data + tr.H_F.data + tr.H_TF.data + tr.H_FT.data) / 4
    np.testing.assert_allclose(out.data, mean4, atol=1e-12, rtol=0)
    pt, pf = m.attention(0, "temporal"), m.attention(0, "feature")
    np.testing.assert_array_equal(tr.H_TF.data, axis_attention(tr.H_T, "feature", pf, 2).data)
    np.testing.assert_array_equal(tr.H_FT.data, axis_attention(tr.H_F, "temporal", pt, 2).data)


def test_helix_layer_single_step():
    m = small_model(n_steps=1)
    h = Tensor(np.random.default_rng(1).standard_normal((1, 1, 3, 8)))
    _, tr = helix_layer(h, m, 0)
    p = m.attention(0, "temporal")
    ref = layer_norm(h + linear(linear(h, p["wv"], p["bv"]), p["wo"], p["bo"]), p["ln_gamma"], p["ln_beta"])
    np.testing.assert_allclose(tr.H_T.data, ref.data, atol=1e-12, rtol=0)


def test_serial_layer_has_three_outputs():
    m = small_model("no_hybrid")
    _, tr = serial_layer(Tensor(np.zeros((1, 4, 3, 8)) + 0.3), m, 0)
    assert len(tr.branches) == 3


def _trace(branches):
    return LayerTrace({f"b{i}": Tensor(b) for i, b in enumerate(branches)}, None)


def test_multi_level_fusion_identities(rng):
    h0 = rng.standard_normal((2, 3, 4, 5))
    np.testing.assert_allclose(multi_level_fusion(Tensor(h0), [_trace([h0] * 4)]).data, h0, atol=1e-12, rtol=0)
    for L, per in ((2, 4), (2, 3), (3, 4), (1, 3)):
        branches = [[rng.standard_normal(h0.shape) for _ in range(per)] for _ in range(L)]
        out = multi_level_fusion(Tensor(h0), [_trace(b) for b in branches]).data
        stack = np.stack([h0] + [b for layer in branches for b in layer])
        assert stack.shape[0] == 1 + per * L
        np.testing.assert_allclose(out, stack.mean(axis=0), atol=1e-12, rtol=0)


def test_fusion_needs_traces():
    with pytest.raises(ContractError):
        multi_level_fusion(Tensor(np.zeros(3)), [])


def test_gated_zero_gate_is_uniform(rng):
    h0 = rng.standard_normal((2, 3, 4, 5))
    traces = [_trace([rng.standard_normal(h0.shape) for _ in range(4)]) for _ in range(2)]
    gate = Tensor(np.zeros((9 * 5, 9)))
    out, w = gated_fusion(Tensor(h0), traces, gate)
    np.testing.assert_allclose(out.data, multi_level_fusion(Tensor(h0), traces).data, atol=1e-12, rtol=0)
    np.testing.assert_allclose(w.data, 1 / 9, atol=1e-15)


def test_gated_weights_simplex(rng):
    h0 = rng.standard_normal((2, 3, 4, 5))
    traces = [_trace([rng.standard_normal(h0.shape) for _ in range(4)])]
    _, w = gated_fusion(Tensor(h0), traces, Tensor(rng.standard_normal((25, 5))))
    assert np.all(w.data >= 0)
    np.testing.assert_allclose(w.data.sum(-1), 1.0, atol=1e-12)


def test_gated_saturated_logit_selects_candidate(rng):
    d = 5
    h0 = rng.standard_normal((2, 3, 4, d))
    h0[..., 0] = 1.0  # constant input feature acts as a bias for the gate
    branches = [rng.standard_normal(h0.shape) for _ in range(4)]
    gate = np.zeros((5 * d, 5))
    gate[0, 3] = 40.0
    out, _ = gated_fusion(Tensor(h0), [_trace(branches)], Tensor(gate))
    np.testing.assert_allclose(out.data, branches[2], atol=1e-10, rtol=0)


def test_gated_arity_mismatch():
    with pytest.raises(DimensionError):
        gated_fusion(Tensor(np.zeros((1, 2))), [_trace([np.zeros((1, 2))] * 4)], Tensor(np.zeros((8, 4))))


@pytest.mark.parametrize("variant", VARIANTS)
def test_forward_shape_and_determinism(variant):
    m = small_model(variant)
    b = random_batch(2, 4, 3)
    a = forward(m, b).x_hat.data
    assert a.shape == (2, 4, 3)
    np.testing.assert_array_equal(a, forward(m, b).x_hat.data)


def test_forward_feature_mismatch():
    with pytest.raises(DimensionError):
        forward(small_model(), random_batch(1, 4, 5))


@pytest.mark.parametrize("variant", VARIANTS)
def test_attention_rows_normalized(variant):
    m = small_model(variant, n_layers=2)
    rec = forward(m, random_batch(3, 4, 3), store_attention=True).attention
    assert len(rec) == 2
    for layer in rec.layers:
        for probs in layer.values():
            np.testing.assert_allclose(probs.sum(-1), 1.0, atol=1e-6)


def test_all_missing_step_uniform_without_identities():
    b = random_batch(2, 4, 3, p_obs=1.0)
    mask = b.mask.copy()
    mask[:, 2, :] = 0.0
    b = SeriesBatch(b.values * mask, mask)
    rec = forward(small_model("no_featid"), b, store_attention=True).attention
    np.testing.assert_allclose(rec.raw(0, "feature")[:, 2], 1.0 / 3, atol=1e-6)
    rec_full = forward(small_model("full"), b, store_attention=True).attention
    assert np.abs(rec_full.raw(0, "feature")[:, 2] - 1.0 / 3).max() > 1e-4


@pytest.mark.parametrize("variant", VARIANTS)
def test_variant_gradients_match_finite_differences(variant):
    m = small_model(variant, seed=2)
    batch = random_batch(2, 4, 3, seed=3)
    plan = make_artificial_mask(batch.mask, 0.4, stream(0, "masking"))
    inp = plan.model_input(batch)
    f = lambda *_: mit_loss(batch.truth, forward(m, inp).x_hat, plan)
    assert grad_check(f, m.parameters()) < 1e-4


def test_unshared_stage_parameters_gradients():
    m = small_model(share_stage_params=False, seed=4)
    assert "layers.0.feature_cross.wq" in m.params
    batch = random_batch(2, 4, 3, seed=5)
    plan = make_artificial_mask(batch.mask, 0.4, stream(1, "masking"))
    f = lambda *_: mit_loss(batch.truth, forward(m, plan.model_input(batch)).x_hat, plan)
    assert grad_check(f, m.parameters()) < 1e-4


def test_dropout_forward_gradient():
    m = small_model(dropout=0.2, seed=6)
    batch = random_batch(2, 4, 3, seed=7)
    plan = make_artificial_mask(batch.mask, 0.4, stream(2, "masking"))
    inp = plan.model_input(batch)
    f = lambda *_: mit_loss(batch.truth, forward(m, inp, "train", rng=stream(0, "dropout")).x_hat, plan)
    assert grad_check(f, m.parameters()) < 1e-4
