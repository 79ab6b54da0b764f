"""Token embedding: ``[value ; PE(t) ; feature identity ; mask]`` per entry."""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .autograd import Tensor, broadcast_to, concat_last, getitem, linear
from .errors import ConfigError, ContractError, DimensionError, RangeError


def sinusoidal_pe(t, d_pe):
    """Sinusoidal encoding of a 0-based step index.

    Index ``2k`` holds ``sin(t / 10000**(2k/d_pe))`` and ``2k+1`` the cosine.
    """
    if d_pe % 2:
        raise ConfigError(f"d_pe must be even, got {d_pe}")
    if t < 0:
        raise RangeError(f"time index must be non-negative, got {t}")
    k = np.arange(d_pe // 2)
    angle = t / np.power(10000.0, 2.0 * k / d_pe)
    out = np.empty(d_pe)
    out[0::2] = np.sin(angle)
    out[1::2] = np.cos(angle)
    return out


def sinusoidal_table(n_steps, d_pe):
    return np.stack([sinusoidal_pe(t, d_pe) for t in range(n_steps)]) if n_steps else np.zeros((0, d_pe))


@dataclass(frozen=True)
class SlotLayout:
    """Where each component sits inside a token embedding."""

    d_pe: int
    d_f: int

    @property
    def d_e(self):
        return 1 + self.d_pe + self.d_f + 1

    @property
    def value(self):
        return slice(0, 1)

    @property
    def pe(self):
        return slice(1, 1 + self.d_pe)

    @property
    def identity(self):
        return slice(1 + self.d_pe, 1 + self.d_pe + self.d_f)

    @property
    def mask(self):
        return slice(self.d_e - 1, self.d_e)

    @property
    def context_index(self):
        """Indices of the non-identity slots (value, PE, mask)."""
        idx = np.arange(self.d_e)
        return idx[(idx < self.identity.start) | (idx >= self.identity.stop)]

    @property
    def identity_index(self):
        return np.arange(self.identity.start, self.identity.stop)


@dataclass(frozen=True)
class EmbeddingConfig:
    d_pe: int = 16
    d_f: int = 8
    d: int = 32
    pe_kind: str = "sinusoidal"
    t_max: int = 24

    def __post_init__(self):
        if self.d_pe < 2 or self.d_pe % 2:
            raise ConfigError(f"d_pe must be even and >= 2, got {self.d_pe}")
        if self.d_f < 0:
            raise ConfigError(f"d_f must be >= 0, got {self.d_f}")
        if self.pe_kind not in ("sinusoidal", "learnable"):
            raise ConfigError(f"unknown pe_kind {self.pe_kind!r}")

    @property
    def layout(self):
        return SlotLayout(self.d_pe, self.d_f)

    @property
    def d_e(self):
        return self.layout.d_e


class TokenEmbedding(NamedTuple):
    tensor: Tensor
    layout: SlotLayout


def embed_batch(values, mask, feature_ids, cfg, pe_table=None):
    """Build the ``[B,T,F,d_e]`` token embedding.

    ``feature_ids`` is the ``[F, d_f]`` identity table (``None`` when the
    identity slots are ablated, in which case ``cfg.d_f`` must be 0).
    ``pe_table`` is the ``[T_max, d_pe]`` learnable table for
    ``pe_kind="learnable"``.
    """
    values = np.asarray(values, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    B, T, F = values.shape
    parts = [Tensor((values * (mask > 0))[..., None])]
    if cfg.pe_kind == "learnable":
        if pe_table is None:
            raise ContractError("learnable PE requested without a PE table")
        if T > pe_table.shape[0]:
            raise RangeError(f"window length {T} exceeds learnable PE table size {pe_table.shape[0]}")
        rows = getitem(pe_table, slice(0, T))
        parts.append(broadcast_to(rows.reshape(1, T, 1, cfg.d_pe), (B, T, F, cfg.d_pe)))
    else:
        pe = sinusoidal_table(T, cfg.d_pe)
        parts.append(Tensor(np.broadcast_to(pe[None, :, None, :], (B, T, F, cfg.d_pe))))
    if cfg.d_f:
        if feature_ids is None:
            raise ContractError("identity slots configured but no identity table given")
        if feature_ids.shape != (F, cfg.d_f):
            raise DimensionError(
                f"identity table shape {feature_ids.shape} does not match F={F}, d_f={cfg.d_f}"
            )
        parts.append(broadcast_to(feature_ids.reshape(1, 1, F, cfg.d_f), (B, T, F, cfg.d_f)))
    parts.append(Tensor(mask[..., None]))
    return TokenEmbedding(concat_last(parts), cfg.layout)


def project_input(embedding, weight, bias):
    """Per-token affine map ``E @ W + b`` from ``d_e`` to model width."""
    E = embedding.tensor if isinstance(embedding, TokenEmbedding) else embedding
    if weight.shape[0] != E.shape[-1] or bias.shape != (weight.shape[1],):
        raise DimensionError(
            f"projection {weight.shape}/{bias.shape} cannot map embedding width {E.shape[-1]}"
        )
    return linear(E, weight, bias)


class ScoreTerms(NamedTuple):
    identity_prior: float
    identity_to_context: float
    context_to_identity: float
    dynamic_context: float

    @property
    def total(self):
        return self.identity_prior + self.identity_to_context + self.context_to_identity + self.dynamic_context


def score_decomposition(e_i, e_j, w_q, w_k, layout):
    """Split the bilinear attention score between two raw token embeddings.

    ``w_q`` and ``w_k`` are ``[d_e, d_k]`` projections (row-vector convention,
    ``q = e @ w_q``), so the score is ``e_i @ (w_q @ w_k.T) @ e_j``.
    """
    e_i = np.asarray(e_i, dtype=np.float64)
    e_j = np.asarray(e_j, dtype=np.float64)
    w_q = np.asarray(w_q, dtype=np.float64)
    w_k = np.asarray(w_k, dtype=np.float64)
    if e_i.shape != (layout.d_e,) or e_j.shape != (layout.d_e,):
        raise ContractError(f"embeddings must have width {layout.d_e}")
    if w_q.shape[0] != layout.d_e or w_k.shape != w_q.shape:
        raise ContractError(f"projections {w_q.shape}, {w_k.shape} do not match d_e={layout.d_e}")
    A = w_q @ w_k.T
    f, r = layout.identity_index, layout.context_index
    fi, fj, ri, rj = e_i[f], e_j[f], e_i[r], e_j[r]
    return ScoreTerms(
        float(fi @ A[np.ix_(f, f)] @ fj),
        float(fi @ A[np.ix_(f, r)] @ rj),
        float(ri @ A[np.ix_(r, f)] @ fj),
        float(ri @ A[np.ix_(r, r)] @ rj),
    )
