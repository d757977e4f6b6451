"""Two-network training loop: warm-up, threshold refresh, mining, tri-regularised updates."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import losses as L
from .data import STRONG, WEAK, AugmentationPolicy, NoisyDataset, augment
from .errors import ConfigError, NumericFault
from .mining import AMBIGUOUS, CLEAN, NOISY, SCORE_MODES, Partition, mining_quality, partition
from .numerics import AdamState, DenseNet, GradientBundle, adam_step, save_checkpoint
from .thresholds import EpochPredictions, ThresholdTable, compute_thresholds, init_thresholds

log = logging.getLogger(__name__)

LAST_N = 5


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    warmup_epochs: int = 10
    batch_size: int = 128
    lr: float = 0.001
    lr_gamma: float = 0.9
    weight_decay: float = 1e-4
    lambda_max: float = 0.9
    beta: float = 0.65
    e_r: int = 90
    omega: float = 1.0
    gamma: float = 1.0
    seed_net1: int = 1
    seed_net2: int = 2
    seed_data: int = 0
    stop_weak_gradient: bool = False
    hidden: tuple = (64, 32)
    weak_sigma: float = 0.1
    strong_sigma: float = 0.5
    mask_prob: float = 0.2
    mining_score: str = "label"
    checkpoint_every: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not 0 <= self.warmup_epochs <= self.epochs:
            raise ConfigError(f"warmup_epochs must lie in [0, epochs], got {self.warmup_epochs}")
        if self.warmup_epochs < self.epochs and self.e_r > self.epochs:
            raise ConfigError(f"e_r ({self.e_r}) must not exceed epochs ({self.epochs})")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr < 0 or not 0 < self.lr_gamma <= 1 or self.weight_decay < 0:
            raise ConfigError("need lr >= 0, 0 < lr_gamma <= 1 and weight_decay >= 0")
        if any(h < 1 for h in self.hidden):
            raise ConfigError(f"hidden sizes must be positive, got {self.hidden}")
        if self.mining_score not in SCORE_MODES:
            raise ConfigError(f"mining_score must be one of {SCORE_MODES}")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0")
        # validate nested groups eagerly
        self.ramp, self.weights, self.augmentation  # noqa: B018

    @property
    def ramp(self) -> L.RampSchedule:
        return L.RampSchedule(self.lambda_max, self.beta, self.e_r)

    @property
    def weights(self) -> L.LossWeights:
        return L.LossWeights(self.omega, self.gamma)

    @property
    def augmentation(self) -> AugmentationPolicy:
        return AugmentationPolicy(self.weak_sigma, self.strong_sigma, self.mask_prob)

    @property
    def is_baseline(self) -> bool:
        return self.warmup_epochs == self.epochs

    def layer_dims(self, input_dim: int, num_classes: int) -> list[int]:
        return [input_dim, *self.hidden, num_classes]

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_gamma ** epoch

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        types = {f.name: f.type for f in fields(cls)}
        unknown = sorted(set(raw) - set(types))
        if unknown:
            raise ConfigError(f"unknown train config field(s): {', '.join(unknown)}")
        vals = {}
        for name, v in raw.items():
            t = types[name]
            if t == "bool":
                ok = isinstance(v, bool)
            elif t == "int":
                ok = isinstance(v, int) and not isinstance(v, bool)
            elif t == "float":
                ok = isinstance(v, (int, float)) and not isinstance(v, bool)
                v = float(v) if ok else v
            elif t == "str":
                ok = isinstance(v, str)
            else:
                ok = isinstance(v, (list, tuple)) and all(isinstance(h, int) for h in v)
            if not ok:
                raise ConfigError(f"field {name!r} has invalid value {v!r} (expected {t})")
            vals[name] = v
        return cls(**vals)

    def baseline(self) -> "TrainConfig":
        """Same schedule with every epoch spent in plain two-network CE training."""
        return replace(self, warmup_epochs=self.epochs)


@dataclass
class DualNet:
    net1: DenseNet
    net2: DenseNet
    opt1: AdamState
    opt2: AdamState

    @classmethod
    def init(cls, layer_dims, seed1: int, seed2: int) -> "DualNet":
        n1 = DenseNet.init(layer_dims, seed1)
        n2 = DenseNet.init(layer_dims, seed2)
        return cls(n1, n2, AdamState.for_net(n1), AdamState.for_net(n2))

    def copy(self) -> "DualNet":
        return DualNet(self.net1.copy(), self.net2.copy(), self.opt1.copy(), self.opt2.copy())

    def predict(self, x):
        return self.net1.forward(x), self.net2.forward(x)


@dataclass
class StepLosses:
    sup: float = 0.0
    mut: float = 0.0
    usc: float = 0.0
    total: float = 0.0
    n_clean: int = 0
    n_ambiguous: int = 0
    n_noisy: int = 0


def batch_schedule(n: int, batch_size: int, seed_data: int, epoch: int) -> list[np.ndarray]:
    """Shuffled minibatch index arrays for one epoch; depends only on (seed, epoch)."""
    perm = np.random.default_rng([seed_data, epoch]).permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def augmentation_rng(seed_data: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed_data, epoch, 1])


def objective_gradients(dual: DualNet, cfg: TrainConfig, *, clean=None, ambiguous=None,
                        noisy=None, lam: float = 0.0):
    """Value and parameter gradients of the batch objective for both networks.

    ``clean`` and ``ambiguous`` are ``(x, y)`` pairs; ``noisy`` is an
    already-augmented ``(x_weak, x_strong)`` pair whose labels are never
    used. Each term is averaged over its own members and vanishes when empty.
    Returns ``(grads_net1, grads_net2, StepLosses)``.
    """
    n1, n2 = dual.net1, dual.net2
    g1 = GradientBundle.zeros_like(n1)
    g2 = GradientBundle.zeros_like(n2)
    out = StepLosses()
    w = cfg.weights

    if clean is not None and len(clean[1]):
        x, y = clean
        n = len(y)
        p1, c1 = n1.forward(x, return_cache=True)
        p2, c2 = n2.forward(x, return_cache=True)
        out.sup = float(np.mean(L.supervised_loss(p1, p2, y)))
        d1, d2 = L.supervised_grad(p1, p2, y)
        g1 = g1 + n1.backward(x, d1 / n, c1)
        g2 = g2 + n2.backward(x, d2 / n, c2)
        out.n_clean = n

    if ambiguous is not None and len(ambiguous[1]):
        x, y = ambiguous
        n = len(y)
        p1, c1 = n1.forward(x, return_cache=True)
        p2, c2 = n2.forward(x, return_cache=True)
        out.mut = float(np.mean(L.mutual_loss(p1, p2, y, lam)))
        d1, d2 = L.mutual_grad(p1, p2, y, lam)
        g1 = g1 + n1.backward(x, d1 * (w.omega / n), c1)
        g2 = g2 + n2.backward(x, d2 * (w.omega / n), c2)
        out.n_ambiguous = n

    if noisy is not None and len(noisy[0]):
        xw, xs = noisy
        n = xw.shape[0]
        pw1, cw1 = n1.forward(xw, return_cache=True)
        ps1, cs1 = n1.forward(xs, return_cache=True)
        pw2, cw2 = n2.forward(xw, return_cache=True)
        ps2, cs2 = n2.forward(xs, return_cache=True)
        out.usc = float(np.mean(L.consistency_loss(pw1, ps1, pw2, ps2)))
        dw1, ds1, dw2, ds2 = L.consistency_grad(pw1, ps1, pw2, ps2, stop_weak=cfg.stop_weak_gradient)
        scale = w.gamma / n
        g1 = g1 + n1.backward(xw, dw1 * scale, cw1) + n1.backward(xs, ds1 * scale, cs1)
        g2 = g2 + n2.backward(xw, dw2 * scale, cw2) + n2.backward(xs, ds2 * scale, cs2)
        out.n_noisy = n

    out.total = L.total_loss(out.sup, out.mut, out.usc, w)
    return g1, g2, out


def train_step(dual: DualNet, lr: float, cfg: TrainConfig, *, clean=None, ambiguous=None,
               noisy=None, lam: float = 0.0, rng: np.random.Generator | None = None) -> StepLosses:
    """One Adam update of both networks on a minibatch split into subsets.

    Unlike :func:`objective_gradients`, ``noisy`` is a raw feature matrix;
    its weak and strong views are drawn here from ``rng``.
    """
    pair = None
    if noisy is not None and len(noisy):
        if rng is None:
            raise ConfigError("consistency term needs an augmentation rng")
        policy = cfg.augmentation
        pair = (augment(noisy, policy, WEAK, rng), augment(noisy, policy, STRONG, rng))
    g1, g2, out = objective_gradients(dual, cfg, clean=clean, ambiguous=ambiguous, noisy=pair, lam=lam)
    adam_step(dual.net1, dual.opt1, g1, lr, cfg.weight_decay)
    adam_step(dual.net2, dual.opt2, g2, lr, cfg.weight_decay)
    return out


def epoch_predictions(dual: DualNet, ds: NoisyDataset) -> EpochPredictions:
    p1, p2 = dual.predict(ds.features)
    return EpochPredictions.from_pair(p1, p2, ds.given_labels)


def evaluate(dual: DualNet, ds: NoisyDataset) -> dict:
    """Accuracy of each network and of the averaged-probability ensemble against true labels."""
    if len(ds) == 0:
        raise ConfigError("cannot evaluate on an empty split")
    p1, p2 = dual.predict(ds.features)
    y = ds.true_labels
    return {
        "net1": float(np.mean(p1.argmax(axis=1) == y)),
        "net2": float(np.mean(p2.argmax(axis=1) == y)),
        "ensemble": float(np.mean(((p1 + p2) / 2.0).argmax(axis=1) == y)),
    }


@dataclass
class EpochReport:
    epoch: int
    phase: str
    lr: float
    lam: float | None
    accuracy: dict
    losses: dict
    subset_sizes: dict | None = None
    mining: dict | None = None
    thresholds: dict | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _accumulate(steps: list[StepLosses]) -> dict:
    def wmean(attr, count):
        n = sum(getattr(s, count) for s in steps)
        return sum(getattr(s, attr) * getattr(s, count) for s in steps) / n if n else 0.0
    return {
        "sup": wmean("sup", "n_clean"),
        "mut": wmean("mut", "n_ambiguous"),
        "usc": wmean("usc", "n_noisy"),
        "total": float(np.mean([s.total for s in steps])) if steps else 0.0,
    }


def _check_losses(steps: list[StepLosses], epoch: int):
    for s in steps:
        if not math.isfinite(s.total):
            raise NumericFault(f"non-finite loss at epoch {epoch}", epoch=epoch)


def warmup_epoch(dual: DualNet, train: NoisyDataset, cfg: TrainConfig, epoch: int) -> dict:
    """Plain two-network cross-entropy over every training sample."""
    steps = []
    lr = cfg.lr_at(epoch)
    try:
        for idx in batch_schedule(len(train), cfg.batch_size, cfg.seed_data, epoch):
            steps.append(train_step(dual, lr, cfg, clean=(train.features[idx], train.given_labels[idx])))
    except NumericFault as exc:
        raise NumericFault(f"{exc} (epoch {epoch})", epoch=epoch) from exc
    _check_losses(steps, epoch)
    return _accumulate(steps)


def asm_epoch(dual: DualNet, train: NoisyDataset, thresholds: ThresholdTable, cfg: TrainConfig,
              epoch: int) -> tuple[ThresholdTable, Partition, dict]:
    """Refresh thresholds, partition the training set, then run one pass of tri-regularised updates."""
    if len(train) == 0:
        raise ConfigError("empty training set")
    preds = epoch_predictions(dual, train)
    table = compute_thresholds(preds, train.num_classes, thresholds, epoch=epoch)
    part = partition(preds, table, cfg.mining_score)
    if sum(part.sizes().values()) != len(train):
        raise AssertionError("partition does not cover the training set")

    lam = L.ramp_lambda(epoch, cfg.ramp)
    lr = cfg.lr_at(epoch)
    rng = augmentation_rng(cfg.seed_data, epoch)
    x, y, a = train.features, train.given_labels, part.assignment
    steps = []
    try:
        for idx in batch_schedule(len(train), cfg.batch_size, cfg.seed_data, epoch):
            ic = idx[a[idx] == CLEAN]
            ia = idx[a[idx] == AMBIGUOUS]
            inz = idx[a[idx] == NOISY]
            steps.append(train_step(dual, lr, cfg, clean=(x[ic], y[ic]), ambiguous=(x[ia], y[ia]),
                                    noisy=x[inz], lam=lam, rng=rng))
    except NumericFault as exc:
        raise NumericFault(f"{exc} (epoch {epoch})", epoch=epoch) from exc
    _check_losses(steps, epoch)
    return table, part, _accumulate(steps)


@dataclass
class TrainResult:
    reports: list[EpochReport]
    dual: DualNet
    config: TrainConfig
    partition: Partition | None = None
    thresholds: ThresholdTable | None = None
    summary: dict = field(default_factory=dict)


def summarize(reports: list[EpochReport], cfg: TrainConfig) -> dict:
    tail = reports[-LAST_N:]
    out = {
        "mode": "baseline" if cfg.is_baseline else "asm",
        "epochs": len(reports),
        "last5_accuracy": float(np.mean([r.accuracy["ensemble"] for r in tail])),
        "last5_accuracy_net1": float(np.mean([r.accuracy["net1"] for r in tail])),
        "last5_accuracy_net2": float(np.mean([r.accuracy["net2"] for r in tail])),
        "final_accuracy": reports[-1].accuracy,
        "final_mining": reports[-1].mining,
        "final_subset_sizes": reports[-1].subset_sizes,
        "threshold_trajectory": [
            {"epoch": r.epoch, "t_clean": r.thresholds["t_clean"], "t_noisy": r.thresholds["t_noisy"]}
            for r in reports if r.thresholds is not None
        ],
    }
    return out


def train(ds: NoisyDataset, cfg: TrainConfig, *, checkpoint_dir=None,
          on_epoch: Callable[[EpochReport], None] | None = None) -> TrainResult:
    """Run ``warmup_epochs`` of CE co-training followed by mining epochs.

    ``checkpoint_dir`` receives ``checkpoint_eNNN.json`` every
    ``cfg.checkpoint_every`` epochs plus ``checkpoint_final.json``.
    """
    train_ds = ds.subset("train")
    test_ds = ds.subset("test")
    if len(train_ds) == 0:
        raise ConfigError("dataset has no training rows")
    if len(test_ds) == 0:
        raise ConfigError("dataset has no test rows")
    if cfg.seed_net1 == cfg.seed_net2:
        log.warning("seed_net1 == seed_net2: both networks start identical, co-training loses its two views")

    dual = DualNet.init(cfg.layer_dims(ds.dim, ds.num_classes), cfg.seed_net1, cfg.seed_net2)
    table = init_thresholds(ds.num_classes)
    part = None
    reports = []
    mask = train_ds.noise_mask
    for epoch in range(cfg.epochs):
        if epoch < cfg.warmup_epochs:
            losses = warmup_epoch(dual, train_ds, cfg, epoch)
            report = EpochReport(epoch, "warmup", cfg.lr_at(epoch), None, evaluate(dual, test_ds), losses)
        else:
            table, part, losses = asm_epoch(dual, train_ds, table, cfg, epoch)
            quality = mining_quality(part, mask)
            report = EpochReport(epoch, "asm", cfg.lr_at(epoch), L.ramp_lambda(epoch, cfg.ramp),
                                 evaluate(dual, test_ds), losses, part.sizes(), quality, table.to_dict())
        reports.append(report)
        log.info("epoch %d [%s] acc=%.4f", epoch, report.phase, report.accuracy["ensemble"])
        if on_epoch is not None:
            on_epoch(report)
        if checkpoint_dir is not None and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(Path(checkpoint_dir) / f"checkpoint_e{epoch:03d}.json",
                            [dual.net1, dual.net2], epoch)
    if checkpoint_dir is not None:
        save_checkpoint(Path(checkpoint_dir) / "checkpoint_final.json", [dual.net1, dual.net2],
                        cfg.epochs - 1)
    return TrainResult(reports, dual, cfg, part, table if part is not None else None,
                       summarize(reports, cfg))
