"""Imputation metrics and structure analyses of a trained model.

Everything here is read-only over arrays: metrics on a held-out index set,
identity-embedding geometry against station distance, feature-attention
against spatial proximity, and error curves by gap length and by how
correlated a feature is with the others.
"""

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .encoder import AttentionRecord, forward
from .errors import ContractError, DimensionError

GAP_BUCKETS = ((1, 2, "1-2"), (3, 5, "3-5"), (6, 10, "6-10"), (11, None, "11+"))


@dataclass(frozen=True)
class EvalReport:
    mae: float
    mse: float
    mre: float
    count: int
    pattern: str = None
    mre_defined: bool = True

    def as_row(self):
        return {"pattern": self.pattern or "", "mae": self.mae, "mse": self.mse, "mre": self.mre, "count": self.count}


def metrics(x, x_hat, eval_mask, pattern=None):
    """MAE, MSE and aggregate relative error ``sum|err| / sum|x|`` over ``eval_mask``."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    sel = np.asarray(eval_mask) > 0
    if x.shape != x_hat.shape or sel.shape != x.shape:
        raise DimensionError(f"shapes differ: truth {x.shape}, estimate {x_hat.shape}, mask {sel.shape}")
    n = int(sel.sum())
    if n == 0:
        raise ContractError("evaluation mask selects no entries")
    err = x_hat[sel] - x[sel]
    abs_err = np.abs(err)
    mae = float(abs_err.sum() / n)
    mse = float((err * err).sum() / n)
    denom = float(np.abs(x[sel]).sum())
    if denom > 0:
        mre, ok = float(abs_err.sum() / denom), True
    else:
        mre, ok = float("nan"), False
    # Cauchy-Schwarz; the slack covers rounding when all errors are equal
    assert mae * mae <= mse * (1 + 1e-12) + 1e-300, "mae^2 > mse"
    return EvalReport(mae, mse, mre, n, pattern, ok)


@dataclass(frozen=True)
class Correlation:
    r: float
    p: float
    n: int
    degenerate: bool = False


def pearson(a, b):
    """Two-pass Pearson r with a two-sided p from the t transform.

    Degenerate inputs (fewer than 3 pairs or zero variance) give ``r = nan``.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimensionError(f"pearson inputs differ in length: {a.size} vs {b.size}")
    n = a.size
    # a constant input is tested directly: sum/n can miss the constant by an ulp
    if n < 3 or np.ptp(a) == 0.0 or np.ptp(b) == 0.0:
        return Correlation(float("nan"), float("nan"), n, True)
    da = a - a.sum() / n
    db = b - b.sum() / n
    saa, sbb = float(da @ da), float(db @ db)
    if saa <= 0.0 or sbb <= 0.0:
        return Correlation(float("nan"), float("nan"), n, True)
    r = float(da @ db) / math.sqrt(saa * sbb)
    r = min(1.0, max(-1.0, r))
    if abs(r) == 1.0:
        return Correlation(r, 0.0, n)
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return Correlation(r, float(2.0 * stats.t.sf(abs(t), n - 2)), n)


def pairwise_distance(coords):
    coords = np.asarray(coords, dtype=np.float64)
    diff = coords[:, None, :] - coords[None, :, :]
    return np.sqrt((diff * diff).sum(-1))


def cosine_similarity(table):
    table = np.asarray(table, dtype=np.float64)
    norms = np.linalg.norm(table, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = table / safe[:, None]
    return unit @ unit.T, norms > 0


@dataclass
class AttentionCorrelation:
    layer: int
    key: str
    r: float
    p: float
    degenerate: bool


@dataclass
class StructureReport:
    similarity: np.ndarray
    distance: np.ndarray
    embedding: Correlation
    attention: list = field(default_factory=list)

    @property
    def r(self):
        return self.embedding.r

    @property
    def p(self):
        return self.embedding.p


def embedding_structure(ids, coords):
    """Correlate identity-embedding cosine similarity with Euclidean station distance.

    Uses the ``F(F-1)/2`` unordered pairs; pairs touching a zero-norm row are
    dropped with a warning.
    """
    ids = np.asarray(getattr(ids, "data", ids), dtype=np.float64)
    coords = np.asarray(coords, dtype=np.float64)
    if coords.shape[0] != ids.shape[0]:
        raise DimensionError(f"{ids.shape[0]} identity rows but {coords.shape[0]} coordinates")
    sim, ok = cosine_similarity(ids)
    dist = pairwise_distance(coords)
    if not ok.all():
        warnings.warn(f"zero-norm identity rows {np.flatnonzero(~ok).tolist()} excluded", RuntimeWarning, stacklevel=2)
    iu, ju = np.triu_indices(len(ids), 1)
    keep = ok[iu] & ok[ju]
    corr = pearson(sim[iu[keep], ju[keep]], dist[iu[keep], ju[keep]])
    return StructureReport(sim, dist, corr)


def proximity(coords):
    """``exp(-d_ij / median off-diagonal distance)``."""
    dist = pairwise_distance(coords)
    off = dist[~np.eye(len(dist), dtype=bool)]
    scale = float(np.median(off)) if off.size else 1.0
    return np.exp(-dist / (scale if scale > 0 else 1.0))


def summarize_attention(record, keys=("feature", "feature_cross")):
    """Per-layer dict of head/batch-averaged ``F x F`` feature-attention matrices."""
    if isinstance(record, AttentionRecord):
        return [{k: record.mean(layer, k) for k in keys if k in record.layers[layer]} for layer in range(len(record))]
    return record


def collect_attention(model, batch, batch_size=64, keys=("feature", "feature_cross")):
    """Average feature attention over every window of ``batch`` (eval mode)."""
    sums, total = None, 0
    for start in range(0, len(batch), batch_size):
        part = batch.take(slice(start, start + batch_size))
        rec = forward(model, part, "eval", store_attention=True).attention
        n = len(part)
        means = summarize_attention(rec, keys)
        if sums is None:
            sums = [{k: m * n for k, m in layer.items()} for layer in means]
        else:
            for acc, layer in zip(sums, means):
                for k, m in layer.items():
                    acc[k] = acc[k] + m * n
        total += n
    if not total:
        raise ContractError("no windows to collect attention from")
    return [{k: v / total for k, v in layer.items()} for layer in sums]


def attention_structure(records, coords, keys=("feature", "feature_cross")):
    """Pearson r between off-diagonal feature attention and spatial proximity, per layer and call.

    ``records`` is an :class:`AttentionRecord` or the output of
    :func:`collect_attention`. Results are ordered by layer, then by ``keys``.
    """
    summary = summarize_attention(records, keys) if records is not None else None
    if not summary or not any(any(k in layer for k in keys) for layer in summary):
        raise ContractError("no feature-attention records available")
    prox = proximity(coords)
    off = ~np.eye(len(prox), dtype=bool)
    out = []
    for layer, mats in enumerate(summary):
        for k in keys:
            if k not in mats:
                continue
            A = np.asarray(mats[k])
            if A.shape != prox.shape:
                raise DimensionError(f"attention {A.shape} does not match {len(prox)} coordinates")
            c = pearson(A[off], prox[off])
            out.append(AttentionCorrelation(layer, k, c.r, c.p, c.degenerate))
    return out


def structure_report(model, batch, coords):
    rep = embedding_structure(model.feature_ids, coords)
    rep.attention = attention_structure(collect_attention(model, batch), coords)
    return rep


def _runs(hidden):
    """Length of the maximal hidden run containing each entry, along axis -2 (time)."""
    h = np.asarray(hidden, dtype=bool)
    lengths = np.zeros(h.shape, dtype=np.int64)
    h3 = h.reshape(-1, *h.shape[-2:])
    l3 = lengths.reshape(h3.shape)
    T = h3.shape[1]
    for n in range(h3.shape[0]):
        for f in range(h3.shape[2]):
            col = h3[n, :, f]
            t = 0
            while t < T:
                if not col[t]:
                    t += 1
                    continue
                end = t
                while end < T and col[end]:
                    end += 1
                l3[n, t:end, f] = end - t
                t = end
    return lengths


@dataclass(frozen=True)
class CurveRow:
    bucket: str
    count: int
    mae: float


def gap_length_curve(x, x_hat, eval_mask):
    """MAE of hidden entries grouped by the length of the hidden run they sit in."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    sel = np.asarray(eval_mask) > 0
    runs = _runs(sel)
    err = np.abs(x_hat - x)
    rows = []
    for lo, hi, label in GAP_BUCKETS:
        in_bucket = sel & (runs >= lo) & ((runs <= hi) if hi is not None else True)
        n = int(in_bucket.sum())
        rows.append(CurveRow(label, n, float(err[in_bucket].sum() / n) if n else float("nan")))
    return rows


def feature_correlation_scores(values, mask=None):
    """Each feature's largest absolute correlation with any other feature, over jointly observed steps."""
    values = np.asarray(values, dtype=np.float64)
    F = values.shape[-1]
    flat = values.reshape(-1, F)
    obs = np.ones(flat.shape, bool) if mask is None else np.asarray(mask).reshape(-1, F) > 0
    scores = np.zeros(F)
    for i in range(F):
        for j in range(F):
            if i == j:
                continue
            both = obs[:, i] & obs[:, j]
            c = pearson(flat[both, i], flat[both, j])
            if not c.degenerate:
                scores[i] = max(scores[i], abs(c.r))
    return scores


@dataclass(frozen=True)
class BinRow:
    bucket: str
    features: tuple
    count: int
    mae_model: float
    mae_baseline: float
    improvement: float


def correlation_bin_curve(x, x_hat_model, x_hat_baseline, eval_mask, reference=None, reference_mask=None):
    """Model vs baseline MAE for features split into terciles of cross-feature correlation.

    Correlations come from ``reference`` (the training split); without it,
    the entries of ``x`` outside ``eval_mask`` are used.
    """
    x = np.asarray(x, dtype=np.float64)
    sel = np.asarray(eval_mask) > 0
    F = x.shape[-1]
    if F < 2:
        raise ContractError("correlation bins need at least two features")
    if reference is None:
        reference, reference_mask = x, ~sel
    scores = feature_correlation_scores(reference, reference_mask)
    order = np.argsort(scores, kind="stable")
    err_m = np.abs(np.asarray(x_hat_model, dtype=np.float64) - x)
    err_b = np.abs(np.asarray(x_hat_baseline, dtype=np.float64) - x)
    rows = []
    for label, feats in zip(("low", "mid", "high"), np.array_split(order, 3)):
        cols = np.zeros(F, bool)
        cols[feats] = True
        s = sel & cols
        n = int(s.sum())
        mm = float(err_m[s].sum() / n) if n else float("nan")
        mb = float(err_b[s].sum() / n) if n else float("nan")
        imp = (mb - mm) / mb if n and mb > 0 else (0.0 if n and mm == mb else float("nan"))
        rows.append(BinRow(label, tuple(int(f) for f in sorted(feats)), n, mm, mb, imp))
    return rows


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
