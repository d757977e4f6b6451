"""Synthetic Gaussian-cluster datasets with injected label noise."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError

SPLITS = ("train", "test")
WEAK, STRONG = "weak", "strong"


@dataclass
class NoisyDataset:
    features: np.ndarray
    given_labels: np.ndarray
    true_labels: np.ndarray
    split: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.given_labels = np.asarray(self.given_labels, dtype=np.int64)
        self.true_labels = np.asarray(self.true_labels, dtype=np.int64)
        self.split = np.asarray(self.split, dtype="<U5")
        n = self.features.shape[0]
        if self.features.ndim != 2:
            raise ConfigError("features must be a 2-D matrix")
        for name in ("given_labels", "true_labels", "split"):
            if getattr(self, name).shape != (n,):
                raise ConfigError(f"{name} must have one entry per row")

    @property
    def noise_mask(self) -> np.ndarray:
        return self.given_labels != self.true_labels

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.features.shape[0]

    def indices(self, split: str) -> np.ndarray:
        return np.flatnonzero(self.split == split)

    def subset(self, split: str) -> "NoisyDataset":
        idx = self.indices(split)
        return NoisyDataset(self.features[idx], self.given_labels[idx], self.true_labels[idx],
                            self.split[idx], self.num_classes)

    def equals(self, other: "NoisyDataset") -> bool:
        return (self.num_classes == other.num_classes
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.given_labels, other.given_labels)
                and np.array_equal(self.true_labels, other.true_labels)
                and np.array_equal(self.split, other.split))


def simplex_centers(k: int, d: int, separation: float) -> np.ndarray:
    """``k`` centers in ``d`` dimensions, all pairwise distances equal to ``separation``."""
    if d < k - 1:
        raise ConfigError(f"cannot place {k} equidistant centers in {d} dimensions")
    e = np.eye(k) * (separation / math.sqrt(2.0))
    e -= e.mean(axis=0)
    if d >= k:
        return np.hstack([e, np.zeros((k, d - k))])
    u, s, _ = np.linalg.svd(e)
    return (u[:, : k - 1] * s[: k - 1])[:, :d]


def _class_block(rng, centers, k, n, ambiguous_fraction):
    d = centers.shape[1]
    n_amb = int(round(ambiguous_fraction * n))
    means = np.repeat(centers[k][None, :], n, axis=0)
    if n_amb:
        others = rng.integers(0, len(centers) - 1, size=n_amb)
        others = others + (others >= k)
        w = rng.uniform(0.35, 0.65, size=(n_amb, 1))
        means[:n_amb] = w * centers[k] + (1.0 - w) * centers[others]
    return means + rng.standard_normal((n, d))


def generate_clusters(k: int, d: int, n_per_class: int, separation: float,
                      ambiguous_fraction: float, seed, n_test_per_class: int = 0) -> NoisyDataset:
    """Unit-variance Gaussian clusters with a share of boundary samples.

    An ``ambiguous_fraction`` of each class is centred between its own
    center and a random other one (own weight uniform in [0.35, 0.65]).
    Rows are ordered train first, then test, each shuffled.
    """
    if k < 2 or d < 2:
        raise ConfigError(f"need k >= 2 and d >= 2, got k={k}, d={d}")
    if n_per_class < 1 or n_test_per_class < 0:
        raise ConfigError("n_per_class must be >= 1 and n_test_per_class >= 0")
    if not separation > 0:
        raise ConfigError(f"separation must be positive, got {separation}")
    if not 0.0 <= ambiguous_fraction < 1.0:
        raise ConfigError(f"ambiguous_fraction must lie in [0, 1), got {ambiguous_fraction}")
    rng = np.random.default_rng(seed)
    centers = simplex_centers(k, d, separation)
    parts = []
    for split, n in (("train", n_per_class), ("test", n_test_per_class)):
        if n == 0:
            continue
        x = np.vstack([_class_block(rng, centers, c, n, ambiguous_fraction) for c in range(k)])
        y = np.repeat(np.arange(k), n)
        order = rng.permutation(len(y))
        parts.append((x[order], y[order], np.full(len(y), split)))
    x = np.vstack([p[0] for p in parts])
    y = np.concatenate([p[1] for p in parts])
    split = np.concatenate([p[2] for p in parts])
    return NoisyDataset(x, y.copy(), y, split, k)


def inject_symmetric_noise(ds: NoisyDataset, ratio: float, seed) -> NoisyDataset:
    """Flip exactly ``floor(ratio * N_train)`` training labels to a uniformly chosen other class."""
    if not 0.0 <= ratio < 1.0:
        raise ConfigError(f"noise ratio must lie in [0, 1), got {ratio}")
    if ds.noise_mask.any():
        raise ConfigError("dataset already carries injected noise")
    train = ds.indices("train")
    n_flip = math.floor(Fraction(str(ratio)) * len(train))
    given = ds.given_labels.copy()
    if n_flip:
        rng = np.random.default_rng(seed)
        chosen = np.sort(rng.choice(train, size=n_flip, replace=False))
        shift = rng.integers(1, ds.num_classes, size=n_flip)
        given[chosen] = (ds.true_labels[chosen] + shift) % ds.num_classes
    return NoisyDataset(ds.features.copy(), given, ds.true_labels.copy(), ds.split.copy(), ds.num_classes)


@dataclass(frozen=True)
class AugmentationPolicy:
    weak_sigma: float = 0.1
    strong_sigma: float = 0.5
    mask_prob: float = 0.2

    def __post_init__(self):
        if self.weak_sigma < 0 or self.strong_sigma < self.weak_sigma:
            raise ConfigError("need 0 <= weak_sigma <= strong_sigma")
        if not 0.0 <= self.mask_prob <= 1.0:
            raise ConfigError(f"mask_prob must lie in [0, 1], got {self.mask_prob}")


def augment(x, policy: AugmentationPolicy, mode: str, rng: np.random.Generator) -> np.ndarray:
    """Feature-space jitter (weak) or jitter plus coordinate dropout (strong). Never mutates ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if mode == WEAK:
        return x + policy.weak_sigma * rng.standard_normal(x.shape)
    if mode == STRONG:
        out = x + policy.strong_sigma * rng.standard_normal(x.shape)
        out[rng.random(x.shape) < policy.mask_prob] = 0.0
        return out
    raise ConfigError(f"unknown augmentation mode {mode!r}")


@dataclass(frozen=True)
class DataConfig:
    k: int = 3
    d: int = 8
    n_per_class: int = 1000
    n_test_per_class: int = 300
    separation: float = 6.0
    ambiguous_fraction: float = 0.2
    noise_ratio: float = 0.0
    seed: int = 0

    @classmethod
    def from_dict(cls, raw: dict) -> "DataConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = sorted(set(raw) - set(known))
        if unknown:
            raise ConfigError(f"unknown data config field(s): {', '.join(unknown)}")
        vals = {}
        for f in fields(cls):
            if f.name not in raw:
                continue
            v = raw[f.name]
            want = int if f.type in ("int", int) else float
            if isinstance(v, bool) or not isinstance(v, (int, float)) or (want is int and not float(v).is_integer()):
                raise ConfigError(f"field {f.name!r} must be {want.__name__}, got {v!r}")
            vals[f.name] = want(v)
        return cls(**vals)

    def to_dict(self) -> dict:
        return asdict(self)


def build_dataset(cfg: DataConfig) -> NoisyDataset:
    ds = generate_clusters(cfg.k, cfg.d, cfg.n_per_class, cfg.separation, cfg.ambiguous_fraction,
                           seed=[cfg.seed, 0], n_test_per_class=cfg.n_test_per_class)
    return inject_symmetric_noise(ds, cfg.noise_ratio, seed=[cfg.seed, 1])


HEADER_PREFIX = ["id", "split", "given_label", "true_label", "is_noisy"]


def save_csv(ds: NoisyDataset, path) -> None:
    header = HEADER_PREFIX + [f"f{j}" for j in range(ds.dim)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        noisy = ds.noise_mask
        for i in range(len(ds)):
            # repr() of a float is the shortest string that round-trips exactly
            w.writerow([i, ds.split[i], int(ds.given_labels[i]), int(ds.true_labels[i]),
                        int(noisy[i])] + [repr(float(v)) for v in ds.features[i]])


def _parse_int(text, what, line):
    try:
        return int(text)
    except ValueError:
        raise ParseError(f"{what} {text!r} is not an integer", line) from None


def load_csv(path, num_classes: int | None = None) -> NoisyDataset:
    """Strict loader; every malformed row raises :class:`ParseError` with its line number.

    Without ``num_classes`` the class count is inferred as max label + 1.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("empty dataset file", 1)
    header = rows[0]
    if header[:5] != HEADER_PREFIX or len(header) < 6:
        raise ParseError(f"unexpected header {header[:6]}", 1)
    dim = len(header) - 5
    if header[5:] != [f"f{j}" for j in range(dim)]:
        raise ParseError("feature columns must be named f0..f{D-1}", 1)
    if len(rows) == 1:
        raise ParseError("dataset file has a header but no rows", 2)
    n = len(rows) - 1
    x = np.empty((n, dim))
    given = np.empty(n, dtype=np.int64)
    true = np.empty(n, dtype=np.int64)
    split = []
    for r, row in enumerate(rows[1:]):
        line = r + 2
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} columns, got {len(row)}", line)
        if _parse_int(row[0], "id", line) != r:
            raise ParseError(f"id {row[0]!r} out of sequence (expected {r})", line)
        if row[1] not in SPLITS:
            raise ParseError(f"split must be one of {SPLITS}, got {row[1]!r}", line)
        split.append(row[1])
        given[r] = _parse_int(row[2], "given_label", line)
        true[r] = _parse_int(row[3], "true_label", line)
        if row[4] not in ("0", "1"):
            raise ParseError(f"is_noisy must be 0 or 1, got {row[4]!r}", line)
        if (row[4] == "1") != (given[r] != true[r]):
            raise ParseError("is_noisy disagrees with given/true labels", line)
        try:
            x[r] = [float(v) for v in row[5:]]
        except ValueError:
            raise ParseError("non-numeric feature value", line) from None
        if not np.all(np.isfinite(x[r])):
            raise ParseError("non-finite feature value", line)
    k = num_classes if num_classes is not None else int(max(given.max(), true.max())) + 1
    for r in range(n):
        for lab in (given[r], true[r]):
            if not 0 <= lab < k:
                raise ParseError(f"label {lab} outside [0, {k})", r + 2)
    if k < 2:
        raise ParseError("dataset needs at least two classes")
    return NoisyDataset(x, given, true, np.array(split), k)
