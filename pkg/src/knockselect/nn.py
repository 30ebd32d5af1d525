"""Small dense networks with hand-written backprop, SGD/Adam and JSON checkpoints.

Shapes follow the row convention: a batch ``x`` is ``(batch, in)`` and a
layer computes ``act(x @ W.T + b)`` with ``W`` of shape ``(out, in)``.
"""
from __future__ import annotations

import copy
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np


class NumericalError(RuntimeError):
    """Training produced a non-finite loss or parameter."""


class Activation(str, enum.Enum):
    IDENTITY = "identity"
    RELU = "relu"
    TANH = "tanh"


def _act(kind, z):
    if kind is Activation.RELU:
        return np.maximum(z, 0.0)
    if kind is Activation.TANH:
        return np.tanh(z)
    return z


def _act_grad(kind, z, a):
    if kind is Activation.RELU:
        return (z > 0.0).astype(z.dtype)
    if kind is Activation.TANH:
        return 1.0 - a * a
    return np.ones_like(z)


@dataclass
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    activation: Activation = Activation.IDENTITY

    @property
    def n_in(self) -> int:
        return self.weight.shape[1]

    @property
    def n_out(self) -> int:
        return self.weight.shape[0]


class DenseNet:
    """Feed-forward stack of dense layers.

    ``forward`` caches the per-layer pre-activations so that a following
    ``backward`` call can produce parameter gradients.
    """

    def __init__(self, layers: Sequence[Layer], rng_seed: int = 0):
        layers = list(layers)
        if not layers:
            raise ValueError("a network needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.n_out != b.n_in:
                raise ValueError(f"layer sizes do not chain: {a.n_out} -> {b.n_in}")
        self.layers: List[Layer] = layers
        self.rng_seed = rng_seed
        self._cache = None

    @classmethod
    def build(cls, sizes: Sequence[int], activations: Sequence, seed: int = 0) -> "DenseNet":
        """He init for ReLU layers, Glorot-uniform for the rest; zero biases."""
        if len(activations) != len(sizes) - 1:
            raise ValueError("need one activation per layer")
        rng = np.random.default_rng(seed)
        layers = []
        for n_in, n_out, act in zip(sizes[:-1], sizes[1:], activations):
            act = Activation(act)
            if act is Activation.RELU:
                w = rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_out, n_in))
            else:
                lim = np.sqrt(6.0 / (n_in + n_out))
                w = rng.uniform(-lim, lim, size=(n_out, n_in))
            layers.append(Layer(w, np.zeros(n_out), act))
        return cls(layers, rng_seed=seed)

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_out

    def params(self) -> List[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def copy(self) -> "DenseNet":
        net = DenseNet(copy.deepcopy(self.layers), rng_seed=self.rng_seed)
        return net

    def load_params_from(self, other: "DenseNet") -> None:
        for dst, src in zip(self.params(), other.params()):
            dst[...] = src

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params())

    def forward(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        xb = x[None, :] if single else x
        if xb.shape[1] != self.n_in:
            raise ValueError(f"input has {xb.shape[1]} columns, network expects {self.n_in}")
        acts = [xb]
        pre = []
        h = xb
        for layer in self.layers:
            z = h @ layer.weight.T + layer.bias
            h = _act(layer.activation, z)
            pre.append(z)
            acts.append(h)
        self._cache = (xb, pre, acts)
        return h[0] if single else h

    def predict(self, x) -> np.ndarray:
        """Forward pass that leaves the backprop cache untouched."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        h = x[None, :] if single else x
        if h.shape[1] != self.n_in:
            raise ValueError(f"input has {h.shape[1]} columns, network expects {self.n_in}")
        for layer in self.layers:
            h = _act(layer.activation, h @ layer.weight.T + layer.bias)
        return h[0] if single else h

    def backward(self, loss_grad, x=None, return_input_grad: bool = False):
        """Gradients of a scalar loss given dLoss/dOutput for the cached forward.

        Returns a list of ``(dW, db)`` per layer (and dLoss/dInput when
        requested). Passing ``x`` checks that the cache belongs to it.
        """
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        xb, pre, acts = self._cache
        if x is not None:
            x = np.asarray(x, dtype=float)
            xx = x[None, :] if x.ndim == 1 else x
            if xx.shape != xb.shape or not np.array_equal(xx, xb):
                raise RuntimeError("stale forward cache: backward input differs from the last forward input")
        g = np.asarray(loss_grad, dtype=float)
        single = g.ndim == 1
        if single:
            g = g[None, :]
        if g.shape != acts[-1].shape:
            raise ValueError(f"loss_grad shape {g.shape} does not match output shape {acts[-1].shape}")
        grads = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            dz = g * _act_grad(layer.activation, pre[i], acts[i + 1])
            grads[i] = (dz.T @ acts[i], dz.sum(axis=0))
            g = dz @ layer.weight
        if return_input_grad:
            return grads, (g[0] if single else g)
        return grads

    def to_dict(self) -> dict:
        return {
            "format": "densenet-v1",
            "rng_seed": self.rng_seed,
            "layers": [
                {
                    "in": layer.n_in,
                    "out": layer.n_out,
                    "activation": layer.activation.value,
                    "weight": layer.weight.ravel(order="C").tolist(),
                    "bias": layer.bias.tolist(),
                }
                for layer in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, blob: dict) -> "DenseNet":
        if blob.get("format") != "densenet-v1":
            raise ValueError("unrecognised network checkpoint format")
        layers = []
        for spec in blob["layers"]:
            w = np.array(spec["weight"], dtype=float).reshape(spec["out"], spec["in"])
            layers.append(Layer(w, np.array(spec["bias"], dtype=float), Activation(spec["activation"])))
        return cls(layers, rng_seed=blob.get("rng_seed", 0))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "DenseNet":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class SGD:
    learning_rate: float = 0.01

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.learning_rate * g


@dataclass
class Adam:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    _m: Optional[list] = field(default=None, repr=False)
    _v: Optional[list] = field(default=None, repr=False)

    def step(self, params, grads):
        if self._m is None:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params]
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(params, grads, self._m, self._v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 32
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def make_optimizer(self):
        if self.optimizer == "sgd":
            return SGD(self.learning_rate)
        return Adam(self.learning_rate, self.beta1, self.beta2, self.eps)


def flat_grads(grads) -> List[np.ndarray]:
    out = []
    for dw, db in grads:
        out.extend((dw, db))
    return out


def mse(pred, target) -> float:
    return float(np.mean((pred - target) ** 2))


def mse_step(net: DenseNet, opt, xb, yb) -> float:
    """One optimizer step on mean squared error over all batch elements."""
    pred = net.forward(xb)
    diff = pred - yb
    loss = float(np.mean(diff * diff))
    grads = net.backward(2.0 * diff / diff.size)
    opt.step(net.params(), flat_grads(grads))
    return loss


def fit(net: DenseNet, inputs, targets, cfg: TrainConfig, optimizer=None) -> List[float]:
    """Minibatch training on MSE; returns the per-epoch mean batch loss.

    Mini-batches are drawn from a seeded per-epoch permutation, so a fixed
    ``cfg.seed`` reproduces the trace bit for bit.
    """
    x = np.asarray(inputs, dtype=float)
    y = np.asarray(targets, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if y.ndim == 1:
        y = y[:, None]
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"inputs have {x.shape[0]} rows but targets have {y.shape[0]}")
    if x.shape[0] == 0:
        raise ValueError("no training rows")
    opt = optimizer if optimizer is not None else cfg.make_optimizer()
    rng = np.random.default_rng(cfg.seed)
    n = x.shape[0]
    bs = min(cfg.batch_size, n)
    trace = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            with np.errstate(over="ignore", invalid="ignore"):
                losses.append(mse_step(net, opt, x[idx], y[idx]))
        epoch_loss = float(np.mean(losses))
        if not np.isfinite(epoch_loss) or not net.all_finite():
            raise NumericalError(f"training diverged at epoch {epoch}: loss={epoch_loss}, trace tail={trace[-5:]}")
        trace.append(epoch_loss)
    return trace
