"""Command-line entry point: ``helix <subcommand> [options]``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error
(unreadable, malformed or corrupted input), 3 numeric failure.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import analysis
from .baselines import feature_statistic, impute_baseline
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import SeriesBatch
from .errors import CheckpointError, ConfigError, ContractError, DataError, DimensionError, NumericError, RangeError
from .io import (
    load_coords,
    load_dataset,
    load_mask,
    normalize_apply,
    normalize_fit,
    normalize_inverse,
    window,
    write_coords,
    write_dataset,
    write_mask,
)
from .missingness import PATTERNS, apply_corruption, synth_spatial
from .model import VARIANTS, HelixModel
from .pipeline import ABLATIONS, ablate, prepare, standardize
from .training import fit, impute

log = logging.getLogger("helix")

METHODS = ("helix", "mean", "median", "locf", "linear")
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _common(p):
    p.add_argument("--config", help="RunConfig JSON file")
    p.add_argument("--seed", type=int, help="unsigned 64-bit seed for every random stream")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--pattern", choices=PATTERNS)
    p.add_argument("--rate", type=float)
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = _Parser(prog="helix", description="Multivariate time-series imputation.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("generate", help="write a spatially correlated synthetic dataset")
    _common(p)

    p = sub.add_parser("corrupt", help="hide entries with a benchmark missingness pattern")
    _common(p)
    p.add_argument("data")

    p = sub.add_parser("train", help="fit a model and write a checkpoint")
    _common(p)
    p.add_argument("data")

    p = sub.add_parser("impute", help="fill missing entries with the model or a baseline")
    _common(p)
    p.add_argument("data")
    p.add_argument("--checkpoint")

    p = sub.add_parser("evaluate", help="score an imputation against ground truth")
    _common(p)
    p.add_argument("imputed")
    p.add_argument("--truth", required=True)
    p.add_argument("--mask", required=True, help="0/1 table of the entries to score")
    p.add_argument("--split", choices=("test", "all"), default="test")

    p = sub.add_parser("analyze", help="embedding, attention, gap-length and correlation reports")
    _common(p)
    p.add_argument("data")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--coords", required=True)
    p.add_argument("--truth")
    p.add_argument("--mask")

    p = sub.add_parser("ablate", help="train and score every model variant")
    _common(p)
    p.add_argument("data", help="ground-truth dataset")
    return parser


def _run_config(args):
    run = RunConfig.load(args.config) if args.config else RunConfig()
    over = {
        "seed": args.seed,
        "model.variant": getattr(args, "variant", None),
        "corruption.pattern": getattr(args, "pattern", None),
        "corruption.rate": getattr(args, "rate", None),
    }
    return run.with_overrides(**over)


def _out(args, name):
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


def cmd_generate(args, run):
    syn = synth_spatial(run.synthetic_spec())
    write_dataset(_out(args, "data.csv"), syn.values)
    write_coords(_out(args, "coords.csv"), syn.coords)
    print(f"wrote {syn.values.shape[0]} rows x {syn.values.shape[1]} features to {args.out}")


def cmd_corrupt(args, run):
    ds = load_dataset(args.data)
    w = window(ds.values, ds.mask, run.window, run.stride)
    c = apply_corruption(np.where(w.mask > 0, w.values, np.nan), run.corruption_spec())
    total = len(ds.time)
    values, mask, hidden = ds.values.copy(), ds.mask.copy(), np.zeros(ds.mask.shape, bool)
    for k, s in enumerate(w.starts):
        rows = slice(s, s + run.window)
        values[rows], mask[rows], hidden[rows] = c.values[k], c.mask[k], c.eval_mask[k]
    write_dataset(_out(args, "corrupted.csv"), values, mask, ds.time, ds.columns)
    write_mask(_out(args, "eval_mask.csv"), hidden, ds.time, ds.columns)
    spec = run.corruption_spec()
    with open(_out(args, "corruption.json"), "w") as fh:
        json.dump(
            {"pattern": spec.pattern, "rate": spec.rate, "realized_rate": c.realized_rate,
             "seed": spec.seed, "rows": total, "log": [list(r) for r in c.rectangles]},
            fh, sort_keys=True, indent=1,
        )
    print(f"pattern {spec.pattern} target {spec.rate} realized {c.realized_rate:.4f}")


def _windows_of(path, run):
    ds = load_dataset(path)
    w = window(ds.values, ds.mask, run.window, run.stride)
    return ds, w


def cmd_train(args, run):
    ds, w = _windows_of(args.data, run)
    prep = standardize(w.values, w.values, w.mask, np.zeros(w.mask.shape, bool), w.split, w.starts)
    model = HelixModel.initialize(run.model_config(w.values.shape[-1]), run.seed)
    model, hist = fit(model, prep.batch("train"), prep.batch("val"), run.train_config())
    save_checkpoint(_out(args, "model.ckpt"), model, run, prep.norm)
    hist.to_csv(_out(args, "history.csv"))
    best = hist.val_mae[hist.best_epoch] if hist.best_epoch is not None else float("nan")
    print(f"epochs {len(hist)} best_epoch {hist.best_epoch} val_mae {best:.6f}")


def _scatter(ds, w, windows, run):
    out = np.where(ds.mask > 0, ds.values, np.nan)
    for k, s in enumerate(w.starts):
        out[s : s + run.window] = windows[k]
    return out


def cmd_impute(args, run):
    method = args.method or "helix"
    if method == "helix":
        if not args.checkpoint:
            raise UsageError("impute --method helix needs --checkpoint")
        ckpt = load_checkpoint(args.checkpoint)
        run = ckpt.config
        ds, w = _windows_of(args.data, run)
        scaled = normalize_apply(w.values, ckpt.norm, w.mask)
        filled = normalize_inverse(impute(ckpt.model, SeriesBatch(scaled, w.mask)), ckpt.norm)
        filled = np.where(w.mask > 0, w.values, filled)
    else:
        ds, w = _windows_of(args.data, run)
        t = w.split["train"]
        stats = feature_statistic(w.values[t], w.mask[t], method) if method in ("mean", "median") else None
        filled = impute_baseline(method, w.values, w.mask, stats)
    write_dataset(_out(args, "imputed.csv"), _scatter(ds, w, filled, run), None, ds.time, ds.columns)
    print(f"method {method} wrote {_out(args, 'imputed.csv')}")


def _row_split(w, total, name):
    rows = np.zeros(total, bool)
    for s in w.starts[w.split[name]]:
        rows[s : s + len(w.values[0])] = True
    return rows


def cmd_evaluate(args, run):
    truth = load_dataset(args.truth)
    imputed = load_dataset(args.imputed)
    hidden = load_mask(args.mask)
    if imputed.values.shape != truth.values.shape or hidden.shape != truth.values.shape:
        raise DataError("truth, imputed and mask tables differ in shape")
    # normalization statistics match training: observed, non-hidden entries of the train windows
    seen = (truth.mask > 0) & ~hidden
    w = window(truth.values, seen, run.window, run.stride)
    norm = normalize_fit(w.values[w.split["train"]], w.mask[w.split["train"]])
    rows = _row_split(w, len(truth.time), "test") if args.split == "test" else np.ones(len(truth.time), bool)
    sel = hidden & (truth.mask > 0) & rows[:, None]
    if (sel & ~(imputed.mask > 0)).any():
        raise DataError("imputed file leaves scored entries empty")
    rep = analysis.metrics(normalize_apply(truth.values, norm), normalize_apply(imputed.values, norm), sel)
    print(f"MAE {rep.mae:.6f} MSE {rep.mse:.6f} MRE {rep.mre:.6f} n {rep.count}")
    if args.out != ".":
        analysis.write_csv(_out(args, "metrics.csv"), ["mae", "mse", "mre", "count"], [[rep.mae, rep.mse, rep.mre, rep.count]])


def cmd_analyze(args, run):
    ckpt = load_checkpoint(args.checkpoint)
    run = ckpt.config
    ds, w = _windows_of(args.data, run)
    coords = load_coords(args.coords, ds.values.shape[1])
    scaled = normalize_apply(w.values, ckpt.norm, w.mask)
    test = w.split["test"]
    batch = SeriesBatch(scaled[test], w.mask[test])
    lines = []
    if ckpt.model.feature_ids is not None:
        rep = analysis.embedding_structure(ckpt.model.feature_ids, coords)
        iu = np.triu_indices(len(coords), 1)
        analysis.write_csv(
            _out(args, "embedding_pairs.csv"),
            ["i", "j", "cosine", "distance"],
            [[int(i), int(j), float(rep.similarity[i, j]), float(rep.distance[i, j])] for i, j in zip(*iu)],
        )
        lines.append(f"embedding similarity vs distance: r={rep.r:.4f} p={rep.p:.3g}")
    att = analysis.attention_structure(analysis.collect_attention(ckpt.model, batch), coords)
    analysis.write_csv(_out(args, "attention_structure.csv"), ["layer", "call", "r", "p"], [[a.layer, a.key, a.r, a.p] for a in att])
    lines += [f"layer {a.layer} {a.key} attention vs proximity: r={a.r:.4f}" for a in att]
    if args.truth and args.mask:
        truth = load_dataset(args.truth)
        hidden = load_mask(args.mask)
        tw = window(truth.values, truth.mask, run.window, run.stride)
        hw = window(hidden.astype(float), truth.mask, run.window, run.stride).values > 0
        x = normalize_apply(tw.values[test], ckpt.norm)
        model_hat = impute(ckpt.model, batch)
        base_hat = impute_baseline("linear", batch.values, batch.mask)
        ev = hw[test] & (tw.mask[test] > 0)
        gap = analysis.gap_length_curve(x, model_hat, ev)
        analysis.write_csv(_out(args, "gap_curve.csv"), ["bucket", "count", "mae"], [[g.bucket, g.count, g.mae] for g in gap])
        train = w.split["train"]
        bins = analysis.correlation_bin_curve(x, model_hat, base_hat, ev, scaled[train], w.mask[train])
        analysis.write_csv(
            _out(args, "correlation_bins.csv"),
            ["bucket", "features", "count", "mae_model", "mae_linear", "improvement"],
            [[b.bucket, " ".join(map(str, b.features)), b.count, b.mae_model, b.mae_baseline, b.improvement] for b in bins],
        )
        lines += [f"gap {g.bucket}: mae={g.mae:.4f} (n={g.count})" for g in gap]
        lines += [f"correlation {b.bucket}: model={b.mae_model:.4f} linear={b.mae_baseline:.4f}" for b in bins]
    with open(_out(args, "summary.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print("\n".join(lines))


def cmd_ablate(args, run):
    ds = load_dataset(args.data)
    prep = prepare(ds.with_nan(), run)
    variants = (args.variant,) if args.variant else ABLATIONS
    results = ablate(prep, run, variants, pattern=run.corruption_spec().pattern)
    rows = [[v, rep.mae, rep.mse, rep.mre, len(hist), hist.best_epoch] for v, rep, hist in results]
    analysis.write_csv(_out(args, "ablation.csv"), ["variant", "mae", "mse", "mre", "epochs", "best_epoch"], rows)
    for v, rep, _ in results:
        print(f"{v:13s} MAE {rep.mae:.6f} MSE {rep.mse:.6f} MRE {rep.mre:.6f}")


COMMANDS = {
    "generate": cmd_generate,
    "corrupt": cmd_corrupt,
    "train": cmd_train,
    "impute": cmd_impute,
    "evaluate": cmd_evaluate,
    "analyze": cmd_analyze,
    "ablate": cmd_ablate,
}


def main(argv=None):
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        if not argv:
            raise UsageError(parser.format_help())
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
        run = _run_config(args)
        COMMANDS[args.command](args, run)
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, CheckpointError, DimensionError, ContractError, RangeError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
