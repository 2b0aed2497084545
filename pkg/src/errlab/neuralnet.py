"""Fully connected feed-forward regression network trained by mini-batch SGD.

Weights for layer i map n[i] inputs to n[i+1] outputs, stored as an
``n[i] x n[i+1]`` array so a batch propagates as ``a @ W + b``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, Diverged, NonFiniteActivation, WidthMismatch
from .randmath import RngState, as_generator


def _relu(z):
    return np.maximum(z, 0.0)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


# name -> (activation, derivative expressed through pre-activation z and output a)
ACTIVATIONS = {
    "relu": (_relu, lambda z, a: (z > 0).astype(z.dtype)),
    "sigmoid": (_sigmoid, lambda z, a: a * (1.0 - a)),
    "tanh": (np.tanh, lambda z, a: 1.0 - a * a),
    "identity": (lambda z: z, lambda z, a: np.ones_like(z)),
}


@dataclass(frozen=True)
class Architecture:
    layer_sizes: tuple
    activations: tuple  # one per non-input layer

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        object.__setattr__(self, "activations", tuple(self.activations))
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ConfigError("need at least input and output layers, all of size >= 1")
        if len(self.activations) != len(self.layer_sizes) - 1:
            raise ConfigError("one activation per non-input layer")
        bad = [a for a in self.activations if a not in ACTIVATIONS]
        if bad:
            raise ConfigError(f"unknown activation(s) {bad}")

    @classmethod
    def regression(cls, n_inputs: int, hidden=(32, 16), activation: str = "relu") -> "Architecture":
        sizes = (n_inputs, *hidden, 1)
        return cls(sizes, (activation,) * len(hidden) + ("identity",))


@dataclass
class MLP:
    arch: Architecture
    weights: list
    biases: list

    def __post_init__(self):
        sizes = self.arch.layer_sizes
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (sizes[i], sizes[i + 1]) or b.shape != (sizes[i + 1],):
                raise ValueError(f"layer {i} parameter shapes do not match architecture")

    def copy(self) -> "MLP":
        return MLP(self.arch, [W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def to_json(self) -> dict:
        return {
            "layer_sizes": list(self.arch.layer_sizes),
            "activations": list(self.arch.activations),
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_json(cls, obj) -> "MLP":
        arch = Architecture(obj["layer_sizes"], obj["activations"])
        return cls(arch, [np.asarray(W, dtype=float).reshape(arch.layer_sizes[i], arch.layer_sizes[i + 1])
                          for i, W in enumerate(obj["weights"])],
                   [np.asarray(b, dtype=float) for b in obj["biases"]])

    def dumps(self) -> str:
        return json.dumps(self.to_json())


@dataclass
class Gradient:
    weights: list
    biases: list


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 128
    max_epochs: int = 500
    patience: int = 20
    validation_fraction: float = 0.1
    seed: RngState = RngState(0)

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 1 or self.patience < 0:
            raise ConfigError("invalid training configuration")
        if not 0 < self.validation_fraction < 1:
            raise ConfigError("validation_fraction must be in (0, 1)")
        if not isinstance(self.seed, RngState):
            object.__setattr__(self, "seed", RngState.from_json(self.seed))


@dataclass
class FitReport:
    epochs_run: int = 0
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1
    final_train_mse: float = math.nan


class ForwardPass(NamedTuple):
    pre: list  # pre-activations per non-input layer
    post: list  # activations per layer, input first

    @property
    def prediction(self) -> np.ndarray:
        return self.post[-1][:, 0]


def init_network(arch: Architecture, rng) -> MLP:
    """Glorot-uniform weights, zero biases."""
    gen = as_generator(rng)
    weights, biases = [], []
    for fan_in, fan_out in zip(arch.layer_sizes[:-1], arch.layer_sizes[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(gen.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MLP(arch, weights, biases)


def _as_batch(net: MLP, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != net.arch.layer_sizes[0]:
        raise WidthMismatch(f"network expects {net.arch.layer_sizes[0]} inputs, got {X.shape[1]}")
    return X


def forward(net: MLP, X) -> ForwardPass:
    a = _as_batch(net, X)
    pre, post = [], [a]
    for W, b, act in zip(net.weights, net.biases, net.arch.activations):
        z = a @ W + b
        a = ACTIVATIONS[act][0](z)
        if not np.all(np.isfinite(a)):
            raise NonFiniteActivation("non-finite activation; training has likely diverged")
        pre.append(z)
        post.append(a)
    return ForwardPass(pre, post)


def _backward(net: MLP, fp: ForwardPass, y: np.ndarray) -> Gradient:
    m = y.shape[0]
    delta = (2.0 / m) * (fp.post[-1] - y[:, None])  # dL/da at the output
    gw, gb = [None] * len(net.weights), [None] * len(net.weights)
    for i in range(len(net.weights) - 1, -1, -1):
        act = net.arch.activations[i]
        if act != "identity":
            delta = delta * ACTIVATIONS[act][1](fp.pre[i], fp.post[i + 1])
        gw[i] = fp.post[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i:
            delta = delta @ net.weights[i].T
    return Gradient(gw, gb)


def backprop_gradient(net: MLP, X, y) -> Gradient:
    """Exact gradient of the batch mean squared error."""
    y = np.asarray(y, dtype=float).ravel()
    fp = forward(net, X)
    if y.shape[0] != fp.post[0].shape[0] or y.shape[0] == 0:
        raise ValueError("batch inputs and targets must be non-empty and aligned")
    return _backward(net, fp, y)


def loss(net: MLP, X, y) -> float:
    y = np.asarray(y, dtype=float).ravel()
    return float(np.mean((forward(net, X).prediction - y) ** 2))


def sgd_step(net: MLP, grad: Gradient, learning_rate: float) -> MLP:
    """Return ``net`` moved one step against the gradient."""
    if isinstance(learning_rate, TrainConfig):
        learning_rate = learning_rate.learning_rate
    return MLP(net.arch,
               [W - learning_rate * g for W, g in zip(net.weights, grad.weights)],
               [b - learning_rate * g for b, g in zip(net.biases, grad.biases)])


def _predict_fast(weights, biases, acts, X):
    a = X
    for W, b, act in zip(weights, biases, acts):
        a = ACTIVATIONS[act][0](a @ W + b)
    return a[:, 0]


def train(net: MLP, X, y, config: TrainConfig = TrainConfig()):
    """Mini-batch SGD with validation-based early stopping.

    A ``validation_fraction`` of rows is held out (drawn from the config
    seed); each epoch reshuffles the remaining rows.  Training stops once the
    validation MSE has not improved for more than ``patience`` consecutive
    epochs, and the weights of the best epoch are returned.
    """
    X = _as_batch(net, X)
    y = np.asarray(y, dtype=float).ravel()
    gen = config.seed.generator()
    n = X.shape[0]
    n_val = max(1, int(round(config.validation_fraction * n)))
    perm = gen.permutation(n)
    val, tr = perm[:n_val], perm[n_val:]
    if config.batch_size > tr.size:
        raise ConfigError(f"batch size {config.batch_size} exceeds {tr.size} training rows")
    Xt, yt, Xv, yv = X[tr], y[tr], X[val], y[val]

    work = net.copy()
    W, B, acts = work.weights, work.biases, work.arch.activations
    derivs = [ACTIVATIONS[a][1] for a in acts]
    fns = [ACTIVATIONS[a][0] for a in acts]
    lr, bs, L = config.learning_rate, config.batch_size, len(W)
    report = FitReport()
    best_val, best_params, stale = math.inf, None, 0

    for epoch in range(config.max_epochs):
        order = gen.permutation(tr.size)
        total = 0.0
        for start in range(0, tr.size, bs):
            idx = order[start:start + bs]
            a, yb = Xt[idx], yt[idx]
            pre, post = [], [a]
            for i in range(L):
                z = a @ W[i] + B[i]
                a = fns[i](z)
                pre.append(z)
                post.append(a)
            diff = a[:, 0] - yb
            total += float(diff @ diff)
            delta = (2.0 / idx.size) * diff[:, None]
            for i in range(L - 1, -1, -1):
                if acts[i] != "identity":
                    delta = delta * derivs[i](pre[i], post[i + 1])
                gW = post[i].T @ delta
                gB = delta.sum(axis=0)
                if i:
                    delta = delta @ W[i].T
                W[i] -= lr * gW
                B[i] -= lr * gB
        train_loss = total / tr.size
        if not math.isfinite(train_loss):
            raise Diverged(f"training loss became non-finite at epoch {epoch}")
        resid = _predict_fast(W, B, acts, Xv) - yv
        val_loss = float(resid @ resid) / yv.size
        if not math.isfinite(val_loss):
            raise Diverged(f"validation loss became non-finite at epoch {epoch}")
        report.train_loss.append(train_loss)
        report.val_loss.append(val_loss)
        report.epochs_run = epoch + 1
        if val_loss < best_val:
            best_val, stale = val_loss, 0
            best_params = ([w.copy() for w in W], [b.copy() for b in B])
            report.best_epoch = epoch
        else:
            stale += 1
            if stale > config.patience:
                break

    out = MLP(net.arch, *best_params)
    resid = _predict_fast(out.weights, out.biases, acts, Xt) - yt
    report.final_train_mse = float(resid @ resid) / yt.size
    return out, report


def predict_nn(net: MLP, X) -> np.ndarray:
    """Predictions for an array or any object with a ``values`` matrix."""
    return forward(net, getattr(X, "values", X)).prediction
