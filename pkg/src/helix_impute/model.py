"""Model configuration and parameter container."""

from dataclasses import asdict, dataclass, fields

import numpy as np

from .autograd import Tensor
from .embedding import EmbeddingConfig, sinusoidal_table
from .errors import ConfigError
from .rng import stream

VARIANTS = ("full", "no_featid", "no_fusion", "no_hybrid", "learnable_pe", "gated_fusion")
ATTN_FIELDS = ("wq", "bq", "wk", "wv", "bv", "wo", "bo", "ln_gamma", "ln_beta")


@dataclass(frozen=True)
class EncoderConfig:
    n_layers: int = 1
    variant: str = "full"
    dropout: float = 0.0
    store_attention: bool = False

    def __post_init__(self):
        if self.n_layers < 1:
            raise ConfigError("n_layers must be >= 1")
        if self.variant not in ("full", "no_hybrid", "no_fusion", "gated_fusion"):
            raise ConfigError(f"unknown encoder variant {self.variant!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")


@dataclass(frozen=True)
class ModelConfig:
    n_features: int
    n_steps: int
    d_pe: int = 16
    d_f: int = 8
    d_model: int = 16
    n_heads: int = 2
    n_layers: int = 1
    dropout: float = 0.0
    variant: str = "full"
    share_stage_params: bool = True

    def __post_init__(self):
        if self.n_features < 1 or self.n_steps < 1:
            raise ConfigError("n_features and n_steps must be >= 1")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.n_heads < 1 or self.d_model % self.n_heads:
            raise ConfigError(f"n_heads={self.n_heads} must divide d_model={self.d_model}")
        if self.d_f < 1:
            raise ConfigError("d_f must be >= 1 (use variant='no_featid' to drop identities)")
        if self.d_pe < 2 or self.d_pe % 2:
            raise ConfigError(f"d_pe must be even and >= 2, got {self.d_pe}")
        if self.n_layers < 1:
            raise ConfigError("n_layers must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)

    @property
    def use_featid(self):
        return self.variant != "no_featid"

    @property
    def d_k(self):
        return self.d_model // self.n_heads

    @property
    def embedding(self):
        return EmbeddingConfig(
            d_pe=self.d_pe,
            d_f=self.d_f if self.use_featid else 0,
            d=self.d_model,
            pe_kind="learnable" if self.variant == "learnable_pe" else "sinusoidal",
            t_max=self.n_steps,
        )

    @property
    def encoder(self):
        enc = {"no_hybrid": "no_hybrid", "no_fusion": "no_fusion", "gated_fusion": "gated_fusion"}
        return EncoderConfig(self.n_layers, enc.get(self.variant, "full"), self.dropout)

    @property
    def n_candidates(self):
        per_layer = 3 if self.variant == "no_hybrid" else 4
        return 1 + per_layer * self.n_layers

    def attention_blocks(self):
        """Names of the attention parameter sets in one layer."""
        if self.variant == "no_hybrid":
            return ("temporal", "feature") if self.share_stage_params else ("temporal", "feature", "temporal_out")
        if self.share_stage_params:
            return ("temporal", "feature")
        return ("temporal", "feature", "temporal_cross", "feature_cross")


def _xavier(rng, n_in, n_out):
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_in, n_out))


class HelixModel:
    """All learnable tensors of one network plus its configuration.

    Parameters live in an insertion-ordered dict keyed by dotted names; the
    order is part of the checkpoint format.
    """

    def __init__(self, config, params):
        self.config = config
        self.params = params

    @classmethod
    def initialize(cls, config, seed=0):
        rng = stream(seed, "init")
        d, emb = config.d_model, config.embedding
        params = {}

        def add(name, value):
            params[name] = Tensor(value, requires_grad=True, name=name)

        if config.use_featid:
            bound = 1.0 / np.sqrt(config.d_f)
            add("embed.feature_ids", rng.uniform(-bound, bound, size=(config.n_features, config.d_f)))
        if emb.pe_kind == "learnable":
            add("embed.pe_table", sinusoidal_table(config.n_steps, config.d_pe))
        add("input.weight", _xavier(rng, emb.d_e, d))
        add("input.bias", np.zeros(d))
        for layer in range(config.n_layers):
            for block in config.attention_blocks():
                p = f"layers.{layer}.{block}."
                add(p + "wq", _xavier(rng, d, d))
                add(p + "bq", np.zeros(d))
                add(p + "wk", _xavier(rng, d, d))
                add(p + "wv", _xavier(rng, d, d))
                add(p + "bv", np.zeros(d))
                add(p + "wo", _xavier(rng, d, d))
                add(p + "bo", np.zeros(d))
                add(p + "ln_gamma", np.ones(d))
                add(p + "ln_beta", np.zeros(d))
        if config.variant == "gated_fusion":
            n = config.n_candidates
            add("fusion.gate", _xavier(rng, n * d, n))
        add("output.ln_gamma", np.ones(d))
        add("output.ln_beta", np.zeros(d))
        add("output.weight", _xavier(rng, d, 1))
        add("output.bias", np.zeros(1))
        return cls(config, params)

    def __getitem__(self, name):
        return self.params[name]

    def parameters(self):
        return list(self.params.values())

    def named_parameters(self):
        return list(self.params.items())

    def attention(self, layer, block):
        p = f"layers.{layer}.{block}."
        return {f: self.params[p + f] for f in ATTN_FIELDS}

    @property
    def feature_ids(self):
        return self.params.get("embed.feature_ids")

    def state_dict(self):
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state):
        if list(state) != list(self.params):
            missing = set(self.params) ^ set(state)
            raise ConfigError(f"state dict keys differ from model: {sorted(missing)}")
        for k, v in state.items():
            if v.shape != self.params[k].shape:
                raise ConfigError(f"shape mismatch for {k}: {v.shape} vs {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=np.float64, copy=True)

    def n_parameters(self):
        return int(sum(p.data.size for p in self.params.values()))
