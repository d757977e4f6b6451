"""Per-class adaptive clean/noisy thresholds, refreshed once per epoch."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, LabelError, ShapeError

INITIAL_CLEAN = 0.8
# stored as the exact complement so t_noisy == 1 - t_clean holds bitwise from the start
INITIAL_NOISY = 1.0 - INITIAL_CLEAN


@dataclass
class ThresholdTable:
    t_clean: np.ndarray
    t_noisy: np.ndarray
    epoch: int = -1

    @property
    def num_classes(self) -> int:
        return len(self.t_clean)

    def to_dict(self) -> dict:
        return {"epoch": self.epoch, "t_clean": self.t_clean.tolist(), "t_noisy": self.t_noisy.tolist()}


@dataclass
class EpochPredictions:
    """Averaged two-network predictions over a dataset, plus the given labels.

    ``confidence`` is the maximum averaged probability and ``label_confidence``
    the averaged probability assigned to the given label.
    """

    probs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.probs.ndim != 2 or self.labels.shape != (self.probs.shape[0],):
            raise ShapeError("probs must be (N, K) with one label per row")
        k = self.probs.shape[1]
        if np.any(self.labels < 0) or np.any(self.labels >= k):
            raise LabelError(f"label out of range [0, {k})")
        rows = np.arange(len(self.labels))
        self.confidence = self.probs.max(axis=1)
        self.predicted = self.probs.argmax(axis=1)
        self.label_confidence = self.probs[rows, self.labels]

    @classmethod
    def from_pair(cls, p1, p2, labels) -> "EpochPredictions":
        return cls((np.asarray(p1) + np.asarray(p2)) / 2.0, labels)

    @property
    def num_classes(self) -> int:
        return self.probs.shape[1]

    def __len__(self) -> int:
        return len(self.labels)


def init_thresholds(num_classes: int) -> ThresholdTable:
    if num_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {num_classes}")
    return ThresholdTable(np.full(num_classes, INITIAL_CLEAN), np.full(num_classes, INITIAL_NOISY), epoch=-1)


def compute_thresholds(preds: EpochPredictions, num_classes: int,
                       previous: ThresholdTable, epoch: int | None = None) -> ThresholdTable:
    """Mean confidence of correctly-predicted samples per given class.

    Classes without a single correct prediction keep ``previous`` values.
    Sums accumulate in ascending sample order.
    """
    if len(preds) == 0:
        raise ConfigError("cannot compute thresholds from an empty prediction set")
    if preds.num_classes != num_classes or previous.num_classes != num_classes:
        raise ConfigError(
            f"class count mismatch: K={num_classes}, predictions {preds.num_classes}, "
            f"previous table {previous.num_classes}"
        )
    correct = preds.predicted == preds.labels
    y = preds.labels[correct]
    counts = np.bincount(y, minlength=num_classes)
    sums = np.bincount(y, weights=preds.confidence[correct], minlength=num_classes)
    has = counts > 0
    t_clean = previous.t_clean.astype(np.float64).copy()
    t_clean[has] = sums[has] / counts[has]
    t_noisy = previous.t_noisy.astype(np.float64).copy()
    t_noisy[has] = 1.0 - t_clean[has]
    if epoch is None:
        epoch = previous.epoch + 1
    return ThresholdTable(t_clean, t_noisy, epoch=epoch)
