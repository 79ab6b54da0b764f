"""In-memory experiment plumbing shared by the CLI and the acceptance suite.

The flow is: ground truth ``[T_total, F]`` -> windows -> benchmark
corruption -> z-score with training-split statistics -> fit -> score on the
hidden entries of the test windows (normalized scale).
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .analysis import metrics
from .baselines import feature_statistic, impute_baseline
from .data import SeriesBatch
from .io import normalize_apply, normalize_fit, window
from .missingness import apply_corruption
from .model import VARIANTS, HelixModel
from .training import fit, impute

BASELINES = ("mean", "median", "locf", "linear")
ABLATIONS = ("full", "no_featid", "no_fusion", "no_hybrid", "learnable_pe", "gated_fusion")


@dataclass
class Prepared:
    """Windows of one run, all on the normalized scale.

    ``truth`` holds ground truth (NaN where never observed), ``values``/``mask``
    the corrupted model input and ``eval_mask`` the hidden entries to score.
    """

    truth: np.ndarray
    values: np.ndarray
    mask: np.ndarray
    eval_mask: np.ndarray
    split: dict
    starts: np.ndarray
    norm: object

    def batch(self, name):
        s = self.split[name]
        return SeriesBatch(self.values[s], self.mask[s])


def standardize(truth_windows, values, mask, eval_mask, split, starts):
    train = split["train"]
    norm = normalize_fit(values[train], mask[train])
    return Prepared(
        normalize_apply(truth_windows, norm),
        normalize_apply(values, norm, mask),
        mask,
        eval_mask,
        split,
        starts,
        norm,
    )


def prepare(series, run):
    """Window and corrupt a ground-truth series per ``run``."""
    series = np.asarray(series, dtype=np.float64)
    observed = np.isfinite(series)
    w = window(np.nan_to_num(series), observed, run.window, run.stride)
    truth = np.where(w.mask > 0, w.values, np.nan)
    c = apply_corruption(truth, run.corruption_spec())
    return standardize(truth, c.values, c.mask, c.eval_mask, w.split, w.starts)


def train_variant(prep, run, variant=None):
    """Initialize and fit one model; returns ``(model, history)``."""
    overrides = {} if variant is None else {"model.variant": variant}
    cfg = run.with_overrides(**overrides)
    model = HelixModel.initialize(cfg.model_config(prep.values.shape[-1]), run.seed)
    return fit(model, prep.batch("train"), prep.batch("val"), cfg.train_config())


def baseline_predictions(prep, kind, split="test"):
    s = prep.split[split]
    stats = None
    if kind in ("mean", "median"):
        t = prep.split["train"]
        stats = feature_statistic(prep.values[t], prep.mask[t], kind)
    return impute_baseline(kind, prep.values[s], prep.mask[s], stats)


def score(prep, x_hat, split="test", pattern=None):
    s = prep.split[split]
    return metrics(np.nan_to_num(prep.truth[s]), x_hat, prep.eval_mask[s], pattern)


def model_predictions(prep, model, split="test"):
    return impute(model, prep.batch(split))


def thread_cap(default=1):
    raw = os.environ.get("HELIX_THREADS")
    if not raw:
        return default
    try:
        n = int(raw)
    except ValueError:
        return default
    return max(1, n)


def ablate(prep, run, variants=ABLATIONS, pattern=None):
    """Train every variant and score it on the test split.

    Variants may run concurrently, capped by ``HELIX_THREADS``; each owns its
    model and its random streams, so results do not depend on scheduling.
    """
    for v in variants:
        if v not in VARIANTS:
            raise ValueError(f"unknown variant {v!r}")

    def one(v):
        model, hist = train_variant(prep, run, v)
        rep = score(prep, model_predictions(prep, model), pattern=pattern)
        return v, rep, hist

    workers = min(thread_cap(), len(variants))
    if workers <= 1:
        return [one(v) for v in variants]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, variants))
