"""Three-way clean/ambiguous/noisy partition of the training set."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, LabelError, ShapeError
from .thresholds import EpochPredictions, ThresholdTable

CLEAN, AMBIGUOUS, NOISY = 0, 1, 2
SUBSET_NAMES = ("clean", "ambiguous", "noisy")
SCORE_MODES = ("label", "max")


@dataclass
class Partition:
    # one subset code per sample (CLEAN / AMBIGUOUS / NOISY)
    assignment: np.ndarray
    epoch: int = -1

    @property
    def clean(self) -> np.ndarray:
        return np.flatnonzero(self.assignment == CLEAN)

    @property
    def ambiguous(self) -> np.ndarray:
        return np.flatnonzero(self.assignment == AMBIGUOUS)

    @property
    def noisy(self) -> np.ndarray:
        return np.flatnonzero(self.assignment == NOISY)

    def sizes(self) -> dict[str, int]:
        counts = np.bincount(self.assignment, minlength=3)
        return {name: int(c) for name, c in zip(SUBSET_NAMES, counts)}

    def __len__(self) -> int:
        return len(self.assignment)


def confidence(p1, p2):
    """Maximum entry of the averaged probability vector(s)."""
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    if p1.shape != p2.shape:
        raise ShapeError(f"probability shapes differ: {p1.shape} vs {p2.shape}")
    s = np.max((p1 + p2) / 2.0, axis=-1)
    return float(s) if np.ndim(s) == 0 else s


def sample_scores(preds: EpochPredictions, score: str = "label") -> np.ndarray:
    """Per-sample score compared against the thresholds of its given class.

    ``"label"`` uses the averaged probability of the given label, ``"max"``
    the label-agnostic maximum probability.
    """
    if score == "label":
        return preds.label_confidence
    if score == "max":
        return preds.confidence
    raise ConfigError(f"unknown score mode {score!r}; expected one of {SCORE_MODES}")


def partition_scores(scores, labels, thresholds: ThresholdTable, epoch: int | None = None) -> Partition:
    """Assign each sample by comparing ``scores[i]`` with its class thresholds.

    noisy: s < t_noisy; clean: s > t_clean; everything else, including both
    boundaries, is ambiguous. If a class has t_noisy > t_clean the noisy test
    wins.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.ndim != 1 or y.shape != s.shape:
        raise ShapeError("scores and labels must be 1-D arrays of equal length")
    k = thresholds.num_classes
    if np.any(y < 0) or np.any(y >= k):
        raise LabelError(f"label out of range [0, {k})")
    tc = np.asarray(thresholds.t_clean)[y]
    tn = np.asarray(thresholds.t_noisy)[y]
    out = np.full(len(s), AMBIGUOUS, dtype=np.int64)
    out[s > tc] = CLEAN
    out[s < tn] = NOISY
    return Partition(out, thresholds.epoch if epoch is None else epoch)


def partition(preds: EpochPredictions, thresholds: ThresholdTable, score: str = "label") -> Partition:
    if preds.num_classes != thresholds.num_classes:
        raise ConfigError("threshold table does not match the predictions' class count")
    return partition_scores(sample_scores(preds, score), preds.labels, thresholds)


def mining_quality(part: Partition, noise_mask) -> dict:
    """Precision/recall of the noisy subset against the injected-noise mask.

    Empty denominators yield 0.0.
    """
    mask = np.asarray(noise_mask, dtype=bool)
    if mask.shape != part.assignment.shape:
        raise ShapeError(f"mask length {mask.size} != partition length {len(part)}")
    flagged = part.assignment == NOISY
    hits = int(np.sum(flagged & mask))
    n_flagged = int(flagged.sum())
    n_mask = int(mask.sum())
    fractions = {}
    for code, name in enumerate(SUBSET_NAMES):
        fractions[name] = float(np.sum(mask & (part.assignment == code)) / n_mask) if n_mask else 0.0
    return {
        "precision": hits / n_flagged if n_flagged else 0.0,
        "recall": hits / n_mask if n_mask else 0.0,
        "noise_fraction_by_subset": fractions,
    }
