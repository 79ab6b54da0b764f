"""Axis attention, the two-stage hybrid layer, fusion and the full forward pass."""

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .autograd import (
    Tensor,
    attention_core,
    concat_last,
    layer_norm,
    linear,
    softmax_last,
)
from .data import SeriesBatch
from .embedding import embed_batch, project_input
from .errors import ConfigError, ContractError, DimensionError, NumericError

AXES = ("temporal", "feature")


@dataclass
class LayerTrace:
    """Branch outputs of one encoder layer, in fusion order, plus the layer output."""

    branches: dict
    output: Tensor

    @property
    def H_T(self):
        return self.branches["H_T"]

    @property
    def H_F(self):
        return self.branches["H_F"]

    @property
    def H_TF(self):
        return self.branches["H_TF"]

    @property
    def H_FT(self):
        return self.branches["H_FT"]


@dataclass
class AttentionRecord:
    """Attention probabilities captured during a forward pass.

    ``layers[l][key]`` is the raw ``[B, groups, heads, S, S]`` array for one
    attention call; ``key`` is ``"temporal"``/``"feature"`` for the first-stage
    calls and ``"temporal_cross"``/``"feature_cross"`` for the second stage
    (``"temporal_out"`` for the last call of a serial layer).
    """

    layers: list = field(default_factory=list)

    def raw(self, layer, key):
        return self.layers[layer][key]

    def mean(self, layer, key="feature"):
        """Head- and batch-averaged ``S x S`` matrix for one call."""
        a = self.layers[layer][key]
        return a.reshape(-1, *a.shape[-2:]).mean(axis=0)

    def __len__(self):
        return len(self.layers)


def axis_attention(h, axis, params, n_heads, p_drop=0.0, training=False, rng=None, record=None, key=None):
    """Multi-head self-attention along one axis of a ``[B,T,F,d]`` tensor.

    The other axis is folded into the batch. Post-norm residual block:
    ``LayerNorm(h + Wo(attn(h)))``. Dropout hits attention probabilities only.
    """
    if axis not in AXES:
        raise ConfigError(f"axis must be one of {AXES}, got {axis!r}")
    d = h.shape[-1]
    if d % n_heads:
        raise DimensionError(f"n_heads={n_heads} does not divide width {d}")
    # one GEMM for all three projections; the key projection carries no bias
    w_qkv = concat_last([params["wq"], params["wk"], params["wv"]])
    b_qkv = concat_last([params["bq"], Tensor(np.zeros(d)), params["bv"]])
    ctx, probs = attention_core(
        linear(h, w_qkv, b_qkv), axis, n_heads, p_drop, training, rng, return_probs=record is not None
    )
    if record is not None:
        record[key or axis] = probs
    out = linear(ctx, params["wo"], params["bo"])
    return layer_norm(h + out, params["ln_gamma"], params["ln_beta"])


def _block(model, layer, name):
    if model.config.share_stage_params:
        name = {"temporal_cross": "temporal", "feature_cross": "feature", "temporal_out": "temporal"}.get(name, name)
    return model.attention(layer, name)


def helix_layer(h_prev, model, layer, training=False, rng=None, record=None):
    """Parallel temporal/feature attention, then the two cross-applied calls, averaged."""
    cfg = model.config
    kw = dict(n_heads=cfg.n_heads, p_drop=cfg.dropout, training=training, rng=rng, record=record)
    h_t = axis_attention(h_prev, "temporal", _block(model, layer, "temporal"), key="temporal", **kw)
    h_f = axis_attention(h_prev, "feature", _block(model, layer, "feature"), key="feature", **kw)
    h_tf = axis_attention(h_t, "feature", _block(model, layer, "feature_cross"), key="feature_cross", **kw)
    h_ft = axis_attention(h_f, "temporal", _block(model, layer, "temporal_cross"), key="temporal_cross", **kw)
    out = (h_t + h_f + h_tf + h_ft) * 0.25
    return out, LayerTrace({"H_T": h_t, "H_F": h_f, "H_TF": h_tf, "H_FT": h_ft}, out)


def serial_layer(h_prev, model, layer, training=False, rng=None, record=None):
    """Temporal, then feature, then temporal attention applied in sequence."""
    cfg = model.config
    kw = dict(n_heads=cfg.n_heads, p_drop=cfg.dropout, training=training, rng=rng, record=record)
    s1 = axis_attention(h_prev, "temporal", _block(model, layer, "temporal"), key="temporal", **kw)
    s2 = axis_attention(s1, "feature", _block(model, layer, "feature"), key="feature", **kw)
    s3 = axis_attention(s2, "temporal", _block(model, layer, "temporal_out"), key="temporal_out", **kw)
    return s3, LayerTrace({"S_T": s1, "S_F": s2, "S_T2": s3}, s3)


def fusion_candidates(h0, traces):
    out = [h0]
    for tr in traces:
        out.extend(tr.branches.values())
    return out


def multi_level_fusion(h0, traces):
    """Uniform average of ``H0`` and every branch output of every layer."""
    if not traces:
        raise ContractError("multi-level fusion needs at least one layer trace")
    cands = fusion_candidates(h0, traces)
    total = cands[0]
    for c in cands[1:]:
        total = total + c
    return total * (1.0 / len(cands))


def gated_fusion(h0, traces, gate):
    """Per-token softmax-weighted sum of the fusion candidates.

    ``gate`` is the ``[n*d, n]`` weight mapping the concatenated candidates to
    ``n`` logits. Returns ``(H_tilde, weights)`` with weights ``[...,n]``.
    """
    if not traces:
        raise ContractError("gated fusion needs at least one layer trace")
    cands = fusion_candidates(h0, traces)
    n, d = len(cands), h0.shape[-1]
    if gate.shape != (n * d, n):
        raise DimensionError(f"gate shape {gate.shape} does not match {n} candidates of width {d}")
    w = softmax_last(linear(concat_last(cands), gate))
    total = None
    for i, c in enumerate(cands):
        term = w[..., i : i + 1] * c
        total = term if total is None else total + term
    return total, w


class ForwardResult(NamedTuple):
    x_hat: Tensor
    traces: list
    attention: AttentionRecord
    h0: Tensor


def forward(model, batch, mode="eval", rng=None, store_attention=False):
    """Run the network on a :class:`SeriesBatch` and return ``[B,T,F]`` reconstructions."""
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    cfg = model.config
    if not isinstance(batch, SeriesBatch):
        batch = SeriesBatch.from_arrays(*batch)
    B, T, F = batch.shape
    if F != cfg.n_features:
        raise DimensionError(f"batch has {F} features, model expects {cfg.n_features}")
    training = mode == "train"
    emb = embed_batch(
        batch.values,
        batch.mask,
        model.params.get("embed.feature_ids"),
        cfg.embedding,
        model.params.get("embed.pe_table"),
    )
    h0 = project_input(emb, model["input.weight"], model["input.bias"])
    record = AttentionRecord() if store_attention else None
    layer_fn = serial_layer if cfg.variant == "no_hybrid" else helix_layer
    traces, h = [], h0
    for layer in range(cfg.n_layers):
        rec = {} if record is not None else None
        h, tr = layer_fn(h, model, layer, training=training, rng=rng, record=rec)
        traces.append(tr)
        if record is not None:
            record.layers.append(rec)
    if cfg.variant == "no_fusion":
        fused = h
    elif cfg.variant == "gated_fusion":
        fused, _ = gated_fusion(h0, traces, model["fusion.gate"])
    else:
        fused = multi_level_fusion(h0, traces)
    z = layer_norm(fused, model["output.ln_gamma"], model["output.ln_beta"])
    x_hat = linear(z, model["output.weight"], model["output.bias"]).reshape(B, T, F)
    if not np.all(np.isfinite(x_hat.data)):
        raise NumericError("non-finite values in model output")
    return ForwardResult(x_hat, traces, record, h0)
