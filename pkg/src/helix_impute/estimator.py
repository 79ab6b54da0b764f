"""Scikit-learn style front end for the imputation network."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .data import SeriesBatch
from .errors import DataError
from .io import normalize_apply, normalize_fit, normalize_inverse
from .model import HelixModel, ModelConfig
from .training import TrainConfig, fit, impute
from .validation import as_windows, check_series


class HelixImputer(TransformerMixin, BaseEstimator):
    """Impute NaN entries of ``[N,T,F]`` windows (or a single ``[T,F]`` window).

    ``fit`` holds out the last ``val_fraction`` of the windows (chronological)
    for early stopping and z-scores every feature with statistics of the
    observed training entries. ``transform`` returns data on the original
    scale with observed entries copied through unchanged.
    """

    def __init__(
        self,
        variant="full",
        d_model=16,
        n_heads=2,
        n_layers=1,
        d_pe=16,
        d_f=8,
        dropout=0.0,
        epochs=1000,
        patience=10,
        batch_size=8,
        lr=5e-3,
        mask_rate=0.2,
        val_fraction=0.125,
        normalize=True,
        seed=0,
    ):
        self.variant = variant
        self.d_model = d_model
        self.n_heads = n_heads
        self.n_layers = n_layers
        self.d_pe = d_pe
        self.d_f = d_f
        self.dropout = dropout
        self.epochs = epochs
        self.patience = patience
        self.batch_size = batch_size
        self.lr = lr
        self.mask_rate = mask_rate
        self.val_fraction = val_fraction
        self.normalize = normalize
        self.seed = seed

    def _model_config(self, n_features, n_steps):
        return ModelConfig(
            n_features=n_features,
            n_steps=n_steps,
            d_pe=self.d_pe,
            d_f=self.d_f,
            d_model=self.d_model,
            n_heads=self.n_heads,
            n_layers=self.n_layers,
            dropout=self.dropout,
            variant=self.variant,
        )

    def _train_config(self):
        return TrainConfig(
            epochs=self.epochs,
            patience=self.patience,
            batch_size=self.batch_size,
            lr=self.lr,
            mask_rate=self.mask_rate,
            seed=self.seed,
        )

    def _scale(self, values, mask):
        return normalize_apply(values, self.norm_, mask) if self.norm_ is not None else values

    def fit(self, X, y=None):
        values, mask = check_series(X)
        values, _ = as_windows(values)
        mask, _ = as_windows(mask)
        N, T, F = values.shape
        n_val = int(round(self.val_fraction * N))
        if N < 2 or not 0 < n_val < N:
            raise DataError(f"need at least one training and one validation window, got N={N}")
        n_train = N - n_val
        self.norm_ = normalize_fit(values[:n_train], mask[:n_train]) if self.normalize else None
        scaled = self._scale(values, mask)
        model = HelixModel.initialize(self._model_config(F, T), self.seed)
        train = SeriesBatch(scaled[:n_train], mask[:n_train])
        val = SeriesBatch(scaled[n_train:], mask[n_train:])
        self.model_, self.history_ = fit(model, train, val, self._train_config())
        self.n_features_in_ = F
        self.n_steps_ = T
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        values, mask = check_series(X, n_features=self.n_features_in_)
        values, squeeze = as_windows(values)
        mask, _ = as_windows(mask)
        if values.shape[1] > self.n_steps_ and self.variant == "learnable_pe":
            raise DataError(f"windows of {values.shape[1]} steps exceed the learned table ({self.n_steps_})")
        out = impute(self.model_, SeriesBatch(self._scale(values, mask), mask))
        if self.norm_ is not None:
            out = normalize_inverse(out, self.norm_)
        out = np.where(mask > 0, values, out)
        return out[0] if squeeze else out
