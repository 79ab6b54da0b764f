from dataclasses import dataclass

import numpy as np

from .errors import DimensionError


@dataclass(frozen=True)
class SeriesBatch:
    """A batch of multivariate windows.

    ``values`` is the model input with missing entries zero-filled, ``mask`` is
    1 where ``values`` is observed, and ``truth`` holds ground truth for
    scoring (it may contain values the model must never see).
    """

    values: np.ndarray
    mask: np.ndarray
    truth: np.ndarray = None

    def __post_init__(self):
        if self.values.ndim != 3:
            raise DimensionError(f"values must be [B,T,F], got {self.values.shape}")
        if self.mask.shape != self.values.shape:
            raise DimensionError(
                f"mask shape {self.mask.shape} != values shape {self.values.shape}"
            )
        if self.truth is not None and self.truth.shape != self.values.shape:
            raise DimensionError(
                f"truth shape {self.truth.shape} != values shape {self.values.shape}"
            )

    @classmethod
    def from_arrays(cls, values, mask, truth=None):
        """Build a batch, zero-filling ``values`` wherever ``mask`` is 0."""
        mask = np.asarray(mask, dtype=np.float64)
        values = np.where(mask > 0, np.nan_to_num(np.asarray(values, dtype=np.float64)), 0.0)
        if truth is not None:
            truth = np.asarray(truth, dtype=np.float64)
        return cls(values, mask, truth)

    @property
    def shape(self):
        return self.values.shape

    def __len__(self):
        return self.values.shape[0]

    def take(self, index):
        truth = None if self.truth is None else self.truth[index]
        return SeriesBatch(self.values[index], self.mask[index], truth)
