"""Minimal dense-network engine: layers, analytic gradients, Adam, checkpoints.

Everything is float64 and deterministic for a fixed seed. Gradients are derived
per layer kind; there is no autodiff graph.
"""

import json
from dataclasses import dataclass

import numpy as np

BN_MOMENTUM = 0.1
BN_EPS = 1e-5


class NeuralError(RuntimeError):
    pass


def glorot_uniform(n_in: int, n_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_in, n_out))


class Linear:
    kind = "linear"

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None):
        self.n_in = n_in
        self.n_out = n_out
        if rng is None:
            self.weight = np.zeros((n_in, n_out))
        else:
            self.weight = glorot_uniform(n_in, n_out, rng)
        self.bias = np.zeros(n_out)

    def parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def forward(self, x, train):
        return x @ self.weight + self.bias, x

    def backward(self, cache, up):
        x = cache
        grads = {"weight": x.T @ up, "bias": up.sum(axis=0)}
        return grads, up @ self.weight.T


class ReLU:
    kind = "relu"

    def parameters(self):
        return []

    def forward(self, x, train):
        return np.maximum(x, 0.0), x

    def backward(self, cache, up):
        return {}, up * (cache > 0.0)


class Sigmoid:
    kind = "sigmoid"

    def parameters(self):
        return []

    def forward(self, x, train):
        y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        return y, y

    def backward(self, cache, up):
        y = cache
        return {}, up * y * (1.0 - y)


class Softmax:
    kind = "softmax"

    def parameters(self):
        return []

    def forward(self, x, train):
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        y = e / e.sum(axis=1, keepdims=True)
        return y, y

    def backward(self, cache, up):
        y = cache
        dot = (up * y).sum(axis=1, keepdims=True)
        return {}, y * (up - dot)


class BatchNorm:
    """Per-feature batch normalization with learnable scale/shift.

    Train mode normalizes by batch statistics and folds them into the running
    estimates; infer mode uses the running estimates and requires at least one
    training batch first.
    """

    kind = "batchnorm"

    def __init__(self, dim: int, momentum: float = BN_MOMENTUM, eps: float = BN_EPS):
        self.dim = dim
        self.momentum = momentum
        self.eps = eps
        self.gamma = np.ones(dim)
        self.shift = np.zeros(dim)
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.batches_seen = 0

    def parameters(self):
        return [("gamma", self.gamma), ("shift", self.shift)]

    def forward(self, x, train):
        if train:
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mean
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * var
            self.batches_seen += 1
        else:
            if self.batches_seen == 0:
                raise NeuralError("batchnorm used in infer mode before any training step")
            mean = self.running_mean
            var = self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        x_hat = (x - mean) * inv_std
        return self.gamma * x_hat + self.shift, (x_hat, inv_std, train)

    def backward(self, cache, up):
        x_hat, inv_std, train = cache
        if not train:
            raise NeuralError("backward through an infer-mode batchnorm cache")
        n = x_hat.shape[0]
        grads = {"gamma": (up * x_hat).sum(axis=0), "shift": up.sum(axis=0)}
        # batch-statistic terms: d/dx of (x - mean(x)) / sqrt(var(x) + eps)
        dx_hat = up * self.gamma
        dx = inv_std / n * (n * dx_hat - dx_hat.sum(axis=0) - x_hat * (dx_hat * x_hat).sum(axis=0))
        return grads, dx


LAYER_KINDS = {c.kind: c for c in (Linear, ReLU, Sigmoid, Softmax, BatchNorm)}


@dataclass
class NetCache:
    version: int
    train: bool
    per_layer: list


class DenseNet:
    """An ordered stack of layers with exact hand-derived gradients."""

    def __init__(self, layers: list):
        self.layers = layers
        self._version = 0
        self._check_dims()

    def _check_dims(self):
        dim = None
        for layer in self.layers:
            if isinstance(layer, Linear):
                if dim is not None and layer.n_in != dim:
                    raise NeuralError(
                        f"consecutive layer dimensions disagree: {dim} -> {layer.n_in}"
                    )
                dim = layer.n_out
            elif isinstance(layer, BatchNorm):
                if dim is not None and layer.dim != dim:
                    raise NeuralError(f"batchnorm dim {layer.dim} does not match {dim}")
                dim = layer.dim

    @property
    def input_dim(self) -> int | None:
        for layer in self.layers:
            if isinstance(layer, Linear):
                return layer.n_in
            if isinstance(layer, BatchNorm):
                return layer.dim
        return None

    def parameters(self) -> list[np.ndarray]:
        return [arr for layer in self.layers for _, arr in layer.parameters()]

    def touch(self) -> None:
        """Invalidate outstanding caches after a parameter update."""
        self._version += 1

    def forward(self, x, train: bool = False):
        x = np.asarray(x, dtype=np.float64)
        expected = self.input_dim
        if expected is not None and x.shape[1] != expected:
            raise NeuralError(f"input width {x.shape[1]} does not match first layer ({expected})")
        caches = []
        out = x
        for layer in self.layers:
            out, cache = layer.forward(out, train)
            caches.append(cache)
        return out, NetCache(self._version, train, caches)

    def backward(self, cache: NetCache, upstream):
        """Parameter gradients plus the gradient w.r.t. the network input."""
        if cache.version != self._version:
            raise NeuralError("stale cache: parameters changed since forward")
        if not cache.train:
            raise NeuralError("backward requires a train-mode cache")
        up = np.asarray(upstream, dtype=np.float64)
        grads_per_layer = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            grads_per_layer[i], up = self.layers[i].backward(cache.per_layer[i], up)
        flat = []
        for layer, grads in zip(self.layers, grads_per_layer):
            for name, _ in layer.parameters():
                flat.append(grads[name])
        return flat, up


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m: list = None
    v: list = None

    @classmethod
    def for_params(cls, params: list, lr: float = 0.001, **kwargs) -> "AdamState":
        state = cls(lr=lr, **kwargs)
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
        return state


def adam_step(params: list, grads: list, state: AdamState) -> AdamState:
    """Bias-corrected Adam update, in place."""
    if len(params) != len(grads):
        raise NeuralError("params/grads length mismatch")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NeuralError("non-finite gradient in adam_step")
    state.step_count += 1
    b1t = 1.0 - state.beta1 ** state.step_count
    b2t = 1.0 - state.beta2 ** state.step_count
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / b1t) / (np.sqrt(v / b2t) + state.epsilon)
    return state


def mse_loss(pred: np.ndarray, target: np.ndarray):
    """Mean squared error over all entries, with its gradient w.r.t. pred."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise NeuralError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff * diff))
    return loss, 2.0 * diff / diff.size


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT = "densenet-checkpoint"
CHECKPOINT_VERSION = 1


def _layer_to_doc(layer) -> dict:
    if isinstance(layer, Linear):
        return {
            "kind": "linear",
            "n_in": layer.n_in,
            "n_out": layer.n_out,
            "weight": layer.weight.tolist(),
            "bias": layer.bias.tolist(),
        }
    if isinstance(layer, BatchNorm):
        return {
            "kind": "batchnorm",
            "dim": layer.dim,
            "momentum": layer.momentum,
            "eps": layer.eps,
            "gamma": layer.gamma.tolist(),
            "shift": layer.shift.tolist(),
            "running_mean": layer.running_mean.tolist(),
            "running_var": layer.running_var.tolist(),
            "batches_seen": layer.batches_seen,
        }
    return {"kind": layer.kind}


def _layer_from_doc(doc: dict):
    kind = doc["kind"]
    if kind == "linear":
        layer = Linear(doc["n_in"], doc["n_out"])
        layer.weight = np.asarray(doc["weight"], dtype=np.float64)
        layer.bias = np.asarray(doc["bias"], dtype=np.float64)
        return layer
    if kind == "batchnorm":
        layer = BatchNorm(doc["dim"], momentum=doc["momentum"], eps=doc["eps"])
        layer.gamma = np.asarray(doc["gamma"], dtype=np.float64)
        layer.shift = np.asarray(doc["shift"], dtype=np.float64)
        layer.running_mean = np.asarray(doc["running_mean"], dtype=np.float64)
        layer.running_var = np.asarray(doc["running_var"], dtype=np.float64)
        layer.batches_seen = doc["batches_seen"]
        return layer
    if kind in LAYER_KINDS:
        return LAYER_KINDS[kind]()
    raise NeuralError(f"unknown layer kind {kind!r} in checkpoint")


def net_to_dict(net: DenseNet) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "layers": [_layer_to_doc(layer) for layer in net.layers],
    }


def net_from_dict(doc: dict) -> DenseNet:
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise NeuralError("not a densenet checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise NeuralError(f"unsupported checkpoint version {doc.get('version')}")
    return DenseNet([_layer_from_doc(d) for d in doc["layers"]])


def save_checkpoint(net: DenseNet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(net_to_dict(net), fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> DenseNet:
    with open(path, "r", encoding="utf-8") as fh:
        return net_from_dict(json.load(fh))
