"""Dense tanh/softmax classifier with hand-written backprop and Adam.

Weights are stored as ``(fan_in, fan_out)`` matrices so a layer computes
``a @ W + b`` on row-major batches.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericFault, ParseError, ShapeError

CHECKPOINT_FORMAT = "asmlab-checkpoint"
CHECKPOINT_VERSION = 1


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class GradientBundle:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    loss: float = 0.0

    @classmethod
    def zeros_like(cls, net: "DenseNet") -> "GradientBundle":
        return cls([np.zeros_like(w) for w in net.weights],
                   [np.zeros_like(b) for b in net.biases])

    def __add__(self, other: "GradientBundle") -> "GradientBundle":
        if len(self.weights) != len(other.weights):
            raise ShapeError("gradient bundles belong to different architectures")
        return GradientBundle(
            [a + b for a, b in zip(self.weights, other.weights)],
            [a + b for a, b in zip(self.biases, other.biases)],
            self.loss + other.loss,
        )

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


class DenseNet:
    """Feed-forward classifier: tanh hidden layers, softmax output."""

    def __init__(self, layer_dims, weights, biases, seed=None):
        layer_dims = [int(d) for d in layer_dims]
        if len(layer_dims) < 2 or min(layer_dims) < 1:
            raise ConfigError(f"invalid layer_dims {layer_dims}")
        if len(weights) != len(layer_dims) - 1 or len(biases) != len(weights):
            raise ShapeError("parameter count does not match layer_dims")
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.shape != (layer_dims[i], layer_dims[i + 1]) or b.shape != (layer_dims[i + 1],):
                raise ShapeError(f"layer {i} parameters have wrong shape")
        self.layer_dims = layer_dims
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.seed = seed

    @classmethod
    def init(cls, layer_dims, seed: int) -> "DenseNet":
        """Glorot-uniform weights, zero biases, drawn from ``seed``."""
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(layer_dims, weights, biases, seed=seed)

    @classmethod
    def zeros(cls, layer_dims) -> "DenseNet":
        return cls(layer_dims,
                   [np.zeros((a, b)) for a, b in zip(layer_dims[:-1], layer_dims[1:])],
                   [np.zeros(b) for b in layer_dims[1:]])

    @property
    def num_classes(self) -> int:
        return self.layer_dims[-1]

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    def copy(self) -> "DenseNet":
        return DenseNet(self.layer_dims, [w.copy() for w in self.weights],
                        [b.copy() for b in self.biases], seed=self.seed)

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def _as_batch(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ShapeError(f"expected inputs of width {self.input_dim}, got shape {x.shape}")
        return x

    def forward(self, x, return_cache: bool = False):
        """Class probabilities for one sample (1-D) or a batch (2-D).

        With ``return_cache`` the layer activations are returned as well, for
        reuse in :meth:`backward`.
        """
        single = np.ndim(x) == 1
        a = self._as_batch(x)
        acts = [a]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            a = softmax(z) if i == last else np.tanh(z)
            acts.append(a)
        p = a[0] if single else a
        if return_cache:
            return p, acts
        return p

    def backward(self, x, upstream, cache=None) -> GradientBundle:
        """Parameter gradients given ``upstream`` = dL/dp for each row.

        Contributions of all rows are summed.
        """
        if cache is None:
            _, cache = self.forward(x, return_cache=True)
        p = cache[-1]
        g = np.asarray(upstream, dtype=np.float64)
        if g.ndim == 1:
            g = g[None, :]
        if g.shape != p.shape:
            raise ShapeError(f"upstream shape {g.shape} does not match output {p.shape}")
        delta = p * (g - np.sum(g * p, axis=1, keepdims=True))
        n_layers = len(self.weights)
        gw: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
        gb: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
        for i in range(n_layers - 1, -1, -1):
            a_prev = cache[i]
            gw[i] = a_prev.T @ delta
            gb[i] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i].T) * (1.0 - a_prev * a_prev)
        return GradientBundle(gw, gb)

    def to_dict(self) -> dict:
        return {
            "layer_dims": list(self.layer_dims),
            "seed": self.seed,
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DenseNet":
        dims = [int(v) for v in d["layer_dims"]]
        weights = [np.asarray(w, dtype=np.float64).reshape(a, b)
                   for w, a, b in zip(d["weights"], dims[:-1], dims[1:])]
        biases = [np.asarray(b, dtype=np.float64) for b in d["biases"]]
        return cls(dims, weights, biases, seed=d.get("seed"))


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_net(cls, net: DenseNet, **kw) -> "AdamState":
        params = net.parameters()
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kw)

    def copy(self) -> "AdamState":
        return AdamState([a.copy() for a in self.m], [a.copy() for a in self.v],
                         self.t, self.beta1, self.beta2, self.eps)


def adam_step(net: DenseNet, state: AdamState, grads: GradientBundle,
              lr: float, weight_decay: float = 0.0) -> None:
    """In-place Adam update with decoupled weight decay (AdamW)."""
    if lr < 0:
        raise ConfigError(f"learning rate must be non-negative, got {lr}")
    params = net.parameters()
    garr = grads.arrays()
    if len(garr) != len(params) or any(g.shape != p.shape for g, p in zip(garr, params)):
        raise ShapeError("gradient shapes do not match network parameters")
    if not grads.is_finite():
        raise NumericFault("non-finite gradient entries")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    with np.errstate(over="ignore", invalid="ignore"):
        for p, g, m, v in zip(params, garr, state.m, state.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
            if weight_decay:
                p -= lr * weight_decay * p
            p -= lr * update
    if not all(np.all(np.isfinite(p)) for p in params):
        raise NumericFault("parameters became non-finite after update")


def save_checkpoint(path, nets, epoch: int, extra: dict | None = None) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "epoch": int(epoch),
        "nets": [n.to_dict() for n in nets],
    }
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> tuple[list[DenseNet], dict]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"checkpoint is not valid JSON: {exc}") from exc
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ParseError("not an asmlab checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint version {doc.get('version')}")
    nets = [DenseNet.from_dict(d) for d in doc["nets"]]
    return nets, {"epoch": doc["epoch"], "extra": doc.get("extra", {})}
