"""Loss terms of the tri-regularised objective and their gradients w.r.t. probabilities.

Every function accepts a single probability vector (shape ``(K,)``) or a
batch (shape ``(N, K)``) and returns per-sample values. Gradient helpers
return dL/dp arrays shaped like their inputs; callers chain them into
:meth:`DenseNet.backward`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, LabelError, NumericFault, ShapeError

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class RampSchedule:
    lambda_max: float = 0.9
    beta: float = 0.65
    e_r: int = 90

    def __post_init__(self):
        if not 0.0 <= self.lambda_max <= 1.0:
            raise ConfigError(f"lambda_max must lie in [0, 1], got {self.lambda_max}")
        if self.beta <= 0:
            raise ConfigError(f"beta must be positive, got {self.beta}")
        if self.e_r <= 0:
            raise ConfigError(f"e_r must be positive, got {self.e_r}")


@dataclass(frozen=True)
class LossWeights:
    omega: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        for name in ("omega", "gamma"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ConfigError(f"{name} must be finite and non-negative, got {v}")


def _pair(p1, p2):
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    if p1.shape != p2.shape:
        raise ShapeError(f"probability shapes differ: {p1.shape} vs {p2.shape}")
    return p1, p2


def _labels(p: np.ndarray, y):
    y = np.asarray(y)
    k = p.shape[-1]
    if p.ndim == 1:
        if y.ndim != 0:
            raise ShapeError("single probability vector needs a scalar label")
    elif y.shape != p.shape[:1]:
        raise ShapeError(f"expected {p.shape[0]} labels, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        raise LabelError(f"labels must be integers, got dtype {y.dtype}")
    if np.any(y < 0) or np.any(y >= k):
        raise LabelError(f"label out of range [0, {k})")
    return y


def _log(p):
    return np.log(np.maximum(p, PROB_FLOOR))


def _dlog(p):
    # derivative of log(max(p, floor)); zero where the floor is active
    return np.where(p > PROB_FLOOR, 1.0 / np.maximum(p, PROB_FLOOR), 0.0)


def _ret(v):
    return float(v) if np.ndim(v) == 0 else v


def cross_entropy(p, y):
    p = np.asarray(p, dtype=np.float64)
    y = _labels(p, y)
    py = p[y] if p.ndim == 1 else np.take_along_axis(p, y[:, None], axis=1)[:, 0]
    return _ret(-_log(py))


def cross_entropy_grad(p, y) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    y = _labels(p, y)
    g = np.zeros_like(p)
    if p.ndim == 1:
        g[y] = -_dlog(p[y])
    else:
        rows = np.arange(p.shape[0])
        g[rows, y] = -_dlog(p[rows, y])
    return g


def supervised_loss(p1, p2, y):
    p1, p2 = _pair(p1, p2)
    return _ret(np.asarray(cross_entropy(p1, y)) + np.asarray(cross_entropy(p2, y)))


def supervised_grad(p1, p2, y):
    p1, p2 = _pair(p1, p2)
    return cross_entropy_grad(p1, y), cross_entropy_grad(p2, y)


def symmetric_kl(p1, p2):
    """KL(p1 || p2) + KL(p2 || p1), with log arguments clamped at ``PROB_FLOOR``."""
    p1, p2 = _pair(p1, p2)
    l1, l2 = _log(p1), _log(p2)
    v = np.sum(p1 * (l1 - l2), axis=-1) + np.sum(p2 * (l2 - l1), axis=-1)
    return _ret(v)


def symmetric_kl_grad(p1, p2):
    p1, p2 = _pair(p1, p2)
    l1, l2 = _log(p1), _log(p2)
    d1, d2 = _dlog(p1), _dlog(p2)
    g1 = (l1 - l2) + p1 * d1 - p2 * d1
    g2 = (l2 - l1) + p2 * d2 - p1 * d2
    return g1, g2


def ramp_lambda(epoch, sched: RampSchedule) -> float:
    """Gaussian-shaped ramp towards ``lambda_max``; held constant from ``e_r`` on."""
    if epoch < 0:
        raise ConfigError(f"epoch must be non-negative, got {epoch}")
    if epoch >= sched.e_r:
        return float(sched.lambda_max)
    return sched.lambda_max * math.exp(-sched.beta * (1.0 - epoch / sched.e_r) ** 2)


def _check_lambda(lam):
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"lambda must lie in [0, 1], got {lam}")


def mutual_loss(p1, p2, y, lam: float):
    _check_lambda(lam)
    sup = np.asarray(supervised_loss(p1, p2, y))
    return _ret((1.0 - lam) * sup + lam * np.asarray(symmetric_kl(p1, p2)))


def mutual_grad(p1, p2, y, lam: float):
    _check_lambda(lam)
    s1, s2 = supervised_grad(p1, p2, y)
    k1, k2 = symmetric_kl_grad(p1, p2)
    return (1.0 - lam) * s1 + lam * k1, (1.0 - lam) * s2 + lam * k2


def _mse(a, b):
    return np.mean((a - b) ** 2, axis=-1)


def consistency_loss(pw1, ps1, pw2, ps2):
    pw1, ps1 = _pair(pw1, ps1)
    pw2, ps2 = _pair(pw2, ps2)
    _pair(pw1, pw2)
    return _ret(_mse(pw1, ps1) + _mse(pw2, ps2))


def consistency_grad(pw1, ps1, pw2, ps2, stop_weak: bool = False):
    """Gradients w.r.t. (pw1, ps1, pw2, ps2); ``stop_weak`` zeroes the weak-branch terms."""
    pw1, ps1 = _pair(pw1, ps1)
    pw2, ps2 = _pair(pw2, ps2)
    k = pw1.shape[-1]
    d1 = 2.0 * (pw1 - ps1) / k
    d2 = 2.0 * (pw2 - ps2) / k
    if stop_weak:
        return np.zeros_like(d1), -d1, np.zeros_like(d2), -d2
    return d1, -d1, d2, -d2


def total_loss(sup: float, mut: float, usc: float, weights: LossWeights) -> float:
    for name, v in (("sup", sup), ("mut", mut), ("usc", usc)):
        if not math.isfinite(v):
            raise NumericFault(f"non-finite {name} loss: {v}")
    return sup + weights.omega * mut + weights.gamma * usc
