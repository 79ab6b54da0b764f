"""Dataset files, z-score normalization and chronological windowing.

A dataset is a wide CSV with header ``time,<feature names...>``; missing cells
are empty or the literal ``NaN``. Station coordinates live in an optional
``feature_id,x,y`` sidecar.
"""

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .data import SeriesBatch
from .errors import DataError, DimensionError, ParseError

SPLITS = ("train", "val", "test")
SPLIT_FRACTIONS = (0.7, 0.1, 0.2)
SIGMA_FLOOR = 1e-8


class Dataset(NamedTuple):
    values: np.ndarray  # [T_total, F], 0 where missing
    mask: np.ndarray  # [T_total, F], 1 where observed
    time: np.ndarray  # [T_total] int
    columns: list

    def with_nan(self):
        return np.where(self.mask > 0, self.values, np.nan)


def _parse_cell(text, row, column):
    s = text.strip()
    if s == "" or s == "NaN":
        return math.nan
    try:
        v = float(s)
    except ValueError:
        raise ParseError(f"non-numeric cell {s!r}", row, column) from None
    if not math.isfinite(v):
        raise ParseError(f"non-finite cell {s!r}", row, column)
    return v


def load_dataset(path):
    """Read a wide CSV into values/mask arrays; rows are 1-based file lines in errors."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", 1) from None
        if not header or header[0].strip() != "time":
            raise ParseError("first column must be 'time'", 1, header[0] if header else None)
        columns = [h.strip() for h in header[1:]]
        if not columns:
            raise ParseError("no feature columns", 1)
        times, rows = [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise ParseError(f"expected {len(header)} cells, found {len(rec)}", lineno)
            try:
                t = int(rec[0].strip())
            except ValueError:
                raise ParseError(f"time {rec[0]!r} is not an integer", lineno, "time") from None
            if times and t <= times[-1]:
                raise ParseError(f"time {t} does not increase (previous {times[-1]})", lineno, "time")
            times.append(t)
            rows.append([_parse_cell(c, lineno, columns[j]) for j, c in enumerate(rec[1:])])
    if not rows:
        raise DataError(f"{path} has a header but no rows")
    raw = np.array(rows, dtype=np.float64)
    mask = np.isfinite(raw)
    return Dataset(np.where(mask, raw, 0.0), mask.astype(np.float64), np.array(times, dtype=np.int64), columns)


def _cell(v):
    # repr of a Python float round-trips exactly
    return repr(float(v))


def write_dataset(path, values, mask=None, time=None, columns=None):
    """Write ``[T_total, F]`` data; entries with ``mask == 0`` or NaN become empty cells."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise DimensionError(f"dataset must be [T,F], got {values.shape}")
    T, F = values.shape
    obs = np.isfinite(values) if mask is None else (np.asarray(mask) > 0) & np.isfinite(values)
    time = np.arange(T) if time is None else np.asarray(time)
    columns = columns or [f"feat_{i}" for i in range(F)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", *columns])
        for t in range(T):
            w.writerow([int(time[t])] + [_cell(values[t, f]) if obs[t, f] else "" for f in range(F)])


def write_mask(path, mask, time=None, columns=None):
    """Write a 0/1 indicator table in the dataset layout."""
    mask = np.asarray(mask, dtype=np.float64)
    write_dataset(path, mask, np.ones_like(mask), time, columns)


def load_mask(path):
    ds = load_dataset(path)
    if not np.isin(ds.values[ds.mask > 0], (0.0, 1.0)).all():
        raise DataError(f"{path} is not a 0/1 mask")
    return ds.values > 0


def load_coords(path, n_features=None):
    """Read ``feature_id,x,y`` rows, ordered by feature_id."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header != ["feature_id", "x", "y"]:
            raise ParseError("coords header must be feature_id,x,y", 1)
        entries = {}
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != 3:
                raise ParseError(f"expected 3 cells, found {len(rec)}", lineno)
            try:
                fid = int(rec[0])
            except ValueError:
                raise ParseError(f"feature_id {rec[0]!r} is not an integer", lineno, "feature_id") from None
            xy = [_parse_cell(c, lineno, name) for c, name in zip(rec[1:], ("x", "y"))]
            if any(math.isnan(v) for v in xy):
                raise ParseError("missing coordinate", lineno)
            if fid in entries:
                raise ParseError(f"duplicate feature_id {fid}", lineno, "feature_id")
            entries[fid] = xy
    ids = sorted(entries)
    if ids != list(range(len(ids))):
        raise DataError("feature ids must be 0..F-1")
    if n_features is not None and len(ids) != n_features:
        raise DataError(f"coords cover {len(ids)} features, data has {n_features}")
    return np.array([entries[i] for i in ids], dtype=np.float64)


def write_coords(path, coords):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature_id", "x", "y"])
        for i, (x, y) in enumerate(np.asarray(coords, dtype=np.float64)):
            w.writerow([i, _cell(x), _cell(y)])


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray


def normalize_fit(values, mask):
    """Per-feature mean and std over observed entries (std floored at 1e-8)."""
    values = np.asarray(values, dtype=np.float64)
    F = values.shape[-1]
    v = values.reshape(-1, F)
    m = np.asarray(mask).reshape(-1, F) > 0
    counts = m.sum(0)
    if (counts < 2).any():
        raise DataError(f"features {np.flatnonzero(counts < 2).tolist()} have fewer than 2 observations")
    mean = np.array([v[m[:, f], f].mean() for f in range(F)])
    std = np.array([v[m[:, f], f].std() for f in range(F)])
    return NormStats(mean, np.maximum(std, SIGMA_FLOOR))


def normalize_apply(values, stats, mask=None):
    out = (np.asarray(values, dtype=np.float64) - stats.mean) / stats.std
    return out if mask is None else np.where(np.asarray(mask) > 0, out, 0.0)


def normalize_inverse(values, stats):
    return np.asarray(values, dtype=np.float64) * stats.std + stats.mean


class Windows(NamedTuple):
    values: np.ndarray  # [N,T,F]
    mask: np.ndarray
    starts: np.ndarray  # first row of each window in the source series
    split: dict  # name -> slice over windows

    def part(self, name, truth=None):
        s = self.split[name]
        return SeriesBatch(self.values[s], self.mask[s], None if truth is None else truth[s])


def split_counts(n):
    """Chronological 70/10/20 window counts; the test split takes the remainder."""
    n_train = int(math.floor(SPLIT_FRACTIONS[0] * n))
    n_val = int(math.floor(SPLIT_FRACTIONS[1] * n))
    return n_train, n_val, n - n_train - n_val


def window(values, mask, length, stride=None):
    """Cut ``[T_total, F]`` into ``[N, length, F]`` windows and assign chronological splits."""
    values = np.asarray(values, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    stride = length if stride is None else stride
    total = values.shape[0]
    if length < 1 or stride < 1:
        raise DataError("window length and stride must be >= 1")
    if total < length:
        raise DataError(f"series of length {total} is shorter than one window ({length})")
    starts = np.arange(0, total - length + 1, stride)
    idx = starts[:, None] + np.arange(length)[None, :]
    n_train, n_val, _ = split_counts(len(starts))
    split = {
        "train": slice(0, n_train),
        "val": slice(n_train, n_train + n_val),
        "test": slice(n_train + n_val, len(starts)),
    }
    return Windows(values[idx], mask[idx], starts, split)


def unwindow(windowed, starts, total, fill=np.nan):
    """Write windows back into a ``[total, F]`` series; later windows win on overlap."""
    windowed = np.asarray(windowed, dtype=np.float64)
    out = np.full((total, windowed.shape[-1]), fill)
    for w, s in zip(windowed, starts):
        out[s : s + len(w)] = w
    return out
