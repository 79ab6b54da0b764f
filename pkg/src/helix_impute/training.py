"""Artificial masking, the two reconstruction losses and the training loop."""

import csv
import logging
import warnings
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .autograd import Adam, Tape, Tensor, backward, tabs
from .data import SeriesBatch
from .encoder import forward
from .errors import ConfigError, DataError, NumericError
from .rng import stream

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MaskPlan:
    """Index sets for one pass.

    ``observed`` is O, ``artificial`` is M_art (a subset of O hidden from the
    model), ``residual`` is O minus M_art, and ``eval_target`` optionally marks
    held-out entries scored at test time.
    """

    observed: np.ndarray
    artificial: np.ndarray
    eval_target: np.ndarray = None

    @property
    def residual(self):
        return self.observed & ~self.artificial

    @property
    def input_mask(self):
        return (self.observed & ~self.artificial).astype(np.float64)

    def model_input(self, batch):
        """The batch the model sees: artificially masked entries zeroed and marked missing."""
        m = self.input_mask
        return SeriesBatch(batch.values * m, m, batch.truth)


def make_artificial_mask(mask, rate, rng, eval_target=None):
    """Hide each observed entry independently with probability ``rate``."""
    if not 0.0 < rate < 1.0:
        raise ConfigError(f"artificial mask rate must lie in (0, 1), got {rate}")
    observed = np.asarray(mask) > 0
    if not observed.any():
        raise DataError("window has no observations")
    artificial = observed & (rng.random(observed.shape) < rate)
    return MaskPlan(observed, artificial, eval_target)


def _masked_mae(x, x_hat, select, label):
    count = int(select.sum())
    if count == 0:
        warnings.warn(f"{label} index set is empty; loss reported as 0", RuntimeWarning, stacklevel=3)
        return Tensor(0.0), 0
    diff = tabs(x_hat - Tensor(np.where(select, x, 0.0)))
    return (diff * select.astype(np.float64)).sum() * (1.0 / count), count


def ort_loss(x, x_hat, plan):
    """Mean absolute error over observed entries the model could see."""
    return _masked_mae(x, x_hat, plan.residual, "ORT")[0]


def mit_loss(x, x_hat, plan):
    """Mean absolute error over artificially masked entries."""
    return _masked_mae(x, x_hat, plan.artificial, "MIT")[0]


@dataclass(frozen=True)
class LossReport:
    ort: float
    mit: float
    total: float
    n_ort: int
    n_mit: int


def compute_losses(x, x_hat, plan):
    """Return ``(total_tensor, LossReport)`` with equal ORT/MIT weights."""
    ort, n_ort = _masked_mae(x, x_hat, plan.residual, "ORT")
    mit, n_mit = _masked_mae(x, x_hat, plan.artificial, "MIT")
    total = ort + mit
    return total, LossReport(float(ort.data), float(mit.data), float(total.data), n_ort, n_mit)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    patience: int = 10
    batch_size: int = 8
    lr: float = 5e-3
    mask_rate: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if not 0.0 < self.mask_rate < 1.0:
            raise ConfigError("mask_rate must lie in (0, 1)")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


@dataclass
class History:
    epochs: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    val_mae: list = field(default_factory=list)
    best_epoch: int = None

    def __len__(self):
        return len(self.epochs)

    def append(self, epoch, train_loss, val_mae):
        self.epochs.append(epoch)
        self.train_loss.append(train_loss)
        self.val_mae.append(val_mae)

    def rows(self):
        return list(zip(self.epochs, self.train_loss, self.val_mae))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_mae"])
            for e, tl, vm in self.rows():
                w.writerow([e, repr(tl), repr(vm)])


def predict(model, batch, batch_size=64):
    """Eval-mode reconstructions for every window, ``[N,T,F]``."""
    outs = []
    for start in range(0, len(batch), batch_size):
        part = batch.take(slice(start, start + batch_size))
        outs.append(forward(model, part, "eval").x_hat.data)
    return np.concatenate(outs, axis=0) if outs else np.zeros(batch.shape)


def masked_mae(x, x_hat, select):
    n = int(select.sum())
    return float(np.abs(x - x_hat)[select].sum() / n) if n else float("nan")


def fit(model, train, val, cfg, callback=None):
    """Train ``model`` in place with Adam on ORT + MIT and early stopping.

    Validation uses one artificial mask drawn at the start; the weights with
    the lowest validation MAE are restored at the end.
    """
    history = History()
    if cfg.epochs == 0:
        return model, history
    if val is None or len(val) == 0:
        raise DataError("fit needs a non-empty validation set")
    val_plan = make_artificial_mask(val.mask, cfg.mask_rate, stream(cfg.seed, "masking", 0xFFFF))
    if not val_plan.artificial.any():
        raise DataError("validation mask plan selected no entries")
    val_input = val_plan.model_input(val)
    opt = Adam(model.parameters(), lr=cfg.lr)
    best, best_state, stale = np.inf, model.state_dict(), 0
    n = len(train)
    for epoch in range(cfg.epochs):
        order = stream(cfg.seed, "shuffle", epoch).permutation(n)
        losses = []
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            batch = train.take(order[start : start + cfg.batch_size])
            plan = make_artificial_mask(batch.mask, cfg.mask_rate, stream(cfg.seed, "masking", epoch, b))
            with Tape() as tape:
                res = forward(model, plan.model_input(batch), "train", rng=stream(cfg.seed, "dropout", epoch, b))
                total, report = compute_losses(batch.values, res.x_hat, plan)
            if not np.isfinite(report.total):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {b}")
            opt.zero_grad()
            backward(total, tape)
            opt.step()
            losses.append(report.total)
        val_hat = predict(model, val_input, cfg.batch_size)
        val_mae = masked_mae(val.values, val_hat, val_plan.artificial)
        train_loss = float(np.mean(losses))
        history.append(epoch, train_loss, val_mae)
        log.debug("epoch %d train %.5f val %.5f", epoch, train_loss, val_mae)
        if callback is not None:
            callback(epoch, train_loss, val_mae)
        if val_mae < best:
            best, best_state, stale = val_mae, model.state_dict(), 0
            history.best_epoch = epoch
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.load_state_dict(best_state)
    return model, history


def impute(model, batch, batch_size=64):
    """Model reconstructions on missing entries, observed values passed through."""
    x_hat = predict(model, batch, batch_size)
    return np.where(batch.mask > 0, batch.values, x_hat)
