"""Benchmark corruption patterns and a spatially correlated synthetic generator.

Every corruption takes ground truth with ``NaN`` (or an explicit mask) marking
entries that were never observed, hides a further subset, and returns the
zero-filled model input together with ``eval_mask``: the hidden entries whose
ground truth is kept for scoring. Rates are measured against the originally
observed entries.
"""

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, ContractError, DataError, NumericError
from .rng import stream

PATTERNS = ("point", "block", "subseq")


class Corruption(NamedTuple):
    values: np.ndarray
    mask: np.ndarray
    eval_mask: np.ndarray
    realized_rate: float
    rectangles: list


def _prepare(data, mask):
    data = np.asarray(data, dtype=np.float64)
    observed = np.isfinite(data) if mask is None else (np.asarray(mask) > 0) & np.isfinite(data)
    return data, observed


def _finish(data, observed, hidden, rects=()):
    new_mask = observed & ~hidden
    values = np.where(new_mask, np.nan_to_num(data), 0.0)
    n_obs = int(observed.sum())
    rate = float(hidden.sum() / n_obs) if n_obs else 0.0
    return Corruption(values, new_mask.astype(np.float64), hidden, rate, list(rects))


def _check_rate(rate):
    if not 0.0 < rate < 1.0 + 1e-12:
        raise ConfigError(f"rate must lie in (0, 1], got {rate}")


def corrupt_point(data, rate, rng, mask=None):
    """Hide each observed entry independently with probability ``rate``."""
    _check_rate(rate)
    data, observed = _prepare(data, mask)
    hidden = observed & (rng.random(data.shape) < rate)
    return _finish(data, observed, hidden)


def corrupt_block(data, rate, block_len, block_width, rng, mask=None, max_draws=None):
    """Hide random ``block_len x block_width`` rectangles until ``rate`` is reached.

    ``data`` is ``[T,F]`` or ``[N,T,F]``; each draw picks a window and a
    uniform top-left corner. The rectangle log ``(window, t0, f0)`` is
    returned so the hidden set can be replayed.
    """
    _check_rate(rate)
    data, observed = _prepare(data, mask)
    squeeze = data.ndim == 2
    if squeeze:
        data, observed = data[None], observed[None]
    N, T, F = data.shape
    if block_len < 1 or block_width < 1:
        raise ConfigError("block dimensions must be >= 1")
    if block_len > T or block_width > F:
        raise ContractError(f"block {block_len}x{block_width} does not fit window {T}x{F}")
    n_obs = int(observed.sum())
    if n_obs == 0:
        raise DataError("cannot reach the requested rate: no observed entries")
    target = rate * n_obs
    hidden = np.zeros_like(observed)
    rects, count = [], 0
    max_draws = max_draws or 1000 * N * (T - block_len + 1) * (F - block_width + 1) + 1000
    while count < target - 1e-9:
        if len(rects) >= max_draws:
            raise DataError(f"rate {rate} unreachable after {len(rects)} block draws")
        w = int(rng.integers(N))
        t0 = int(rng.integers(T - block_len + 1))
        f0 = int(rng.integers(F - block_width + 1))
        rects.append((w, t0, f0))
        region = np.s_[w, t0 : t0 + block_len, f0 : f0 + block_width]
        newly = observed[region] & ~hidden[region]
        count += int(newly.sum())
        hidden[region] |= observed[region]
    out = _finish(data, observed, hidden, rects)
    if squeeze:
        out = out._replace(values=out.values[0], mask=out.mask[0], eval_mask=out.eval_mask[0])
    return out


def replay_rectangles(shape, rectangles, block_len, block_width):
    """Union of logged rectangles as a boolean array of ``shape`` ``[N,T,F]``."""
    cover = np.zeros(shape, dtype=bool)
    for w, t0, f0 in rectangles:
        cover[w, t0 : t0 + block_len, f0 : f0 + block_width] = True
    return cover


def subseq_length(rate, n_steps):
    # round() guards against rate*T landing a hair above an integer
    return min(n_steps, max(1, math.ceil(round(rate * n_steps, 9))))


def corrupt_subseq(data, rate, rng, mask=None):
    """Hide one contiguous interval of ``ceil(rate*T)`` steps, all features, per window."""
    _check_rate(rate)
    data, observed = _prepare(data, mask)
    squeeze = data.ndim == 2
    if squeeze:
        data, observed = data[None], observed[None]
    N, T, _ = data.shape
    length = subseq_length(rate, T)
    hidden = np.zeros_like(observed)
    spans = []
    for w in range(N):
        t0 = int(rng.integers(T - length + 1))
        spans.append((w, t0, t0 + length))
        hidden[w, t0 : t0 + length, :] = observed[w, t0 : t0 + length, :]
    out = _finish(data, observed, hidden, spans)
    if squeeze:
        out = out._replace(values=out.values[0], mask=out.mask[0], eval_mask=out.eval_mask[0])
    return out


@dataclass(frozen=True)
class CorruptionSpec:
    pattern: str = "point"
    rate: float = 0.5
    block_len: int = 6
    block_width: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise ConfigError(f"pattern must be one of {PATTERNS}, got {self.pattern!r}")
        if not 0.0 < self.rate < 1.0:
            raise ConfigError(f"rate must lie in (0, 1), got {self.rate}")
        if self.block_len < 1 or self.block_width < 1:
            raise ConfigError("block_len and block_width must be >= 1")


def apply_corruption(windows, spec, mask=None):
    """Corrupt ``[N,T,F]`` windows per ``spec``; block geometry is clipped to the window."""
    rng = stream(spec.seed, "corrupt")
    if spec.pattern == "point":
        return corrupt_point(windows, spec.rate, rng, mask)
    if spec.pattern == "block":
        T, F = windows.shape[-2:]
        return corrupt_block(windows, spec.rate, min(spec.block_len, T), min(spec.block_width, F), rng, mask)
    return corrupt_subseq(windows, spec.rate, rng, mask)


@dataclass(frozen=True)
class SyntheticSpec:
    n_features: int = 12
    n_steps: int = 24
    n_windows: int = 400
    length_scale: float = 0.4
    noise_std: float = 0.1
    ar_coef: float = 0.8
    seed: int = 0
    coords: tuple = field(default=None, compare=False)

    def __post_init__(self):
        if not self.length_scale > 0:
            raise ConfigError("length_scale must be positive")
        if self.n_features < 1 or self.n_steps < 1 or self.n_windows < 1:
            raise ConfigError("n_features, n_steps and n_windows must be >= 1")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be non-negative")
        if not -1.0 < self.ar_coef < 1.0:
            raise ConfigError("ar_coef must lie in (-1, 1)")


class SyntheticData(NamedTuple):
    values: np.ndarray  # [n_windows * n_steps, F]
    coords: np.ndarray  # [F, 2]
    kernel: np.ndarray  # [F, F]


def gaussian_kernel(coords, length_scale):
    diff = coords[:, None, :] - coords[None, :, :]
    return np.exp(-(diff**2).sum(-1) / length_scale**2)


def _cholesky(K):
    try:
        return np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        pass
    for jitter in (1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6):
        try:
            return np.linalg.cholesky(K + jitter * np.eye(len(K)))
        except np.linalg.LinAlgError:
            continue
    raise NumericError("covariance is not positive definite even with jitter 1e-6")


def synth_spatial(spec):
    """Stations in the unit square with Gaussian-kernel correlation and AR(1) time dynamics.

    The latent cross-section at each step has covariance ``K`` (stationary
    under the AR(1) driver); observation noise is added on top. Windows are
    consecutive chunks of one long series.
    """
    rng = stream(spec.seed, "data")
    F = spec.n_features
    coords = np.asarray(spec.coords, dtype=np.float64) if spec.coords is not None else rng.uniform(0.0, 1.0, size=(F, 2))
    if coords.shape != (F, 2):
        raise ConfigError(f"coords must have shape ({F}, 2)")
    K = gaussian_kernel(coords, spec.length_scale)
    L = _cholesky(K)
    total = spec.n_windows * spec.n_steps
    eps = rng.standard_normal((total, F)) @ L.T
    innov = math.sqrt(1.0 - spec.ar_coef**2)
    z = np.empty((total, F))
    z[0] = eps[0]
    for t in range(1, total):
        z[t] = spec.ar_coef * z[t - 1] + innov * eps[t]
    values = z + spec.noise_std * rng.standard_normal((total, F))
    return SyntheticData(values, coords, K)
