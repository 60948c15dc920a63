"""Small dense networks with hand-written backprop, Adam and Polyak averaging.

Layers compute ``y = x @ W + b`` with ``W`` of shape ``(fan_in, fan_out)``.
Hidden layers use tanh; the output layer is linear or tanh. Inputs may be a
single vector or a ``(batch, fan_in)`` matrix.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"INDRLNET"
FORMAT_VERSION = 1
_ACTIVATIONS = ("linear", "tanh")


class StaleCacheError(RuntimeError):
    pass


class ArchitectureMismatchError(ValueError):
    pass


@dataclass
class ForwardCache:
    inputs: list  # input to each layer
    output: np.ndarray
    version: int
    squeeze: bool


@dataclass
class Gradients:
    weights: list
    biases: list
    input: np.ndarray | None = None

    def flat(self) -> np.ndarray:
        parts = [p.ravel() for pair in zip(self.weights, self.biases) for p in pair]
        return np.concatenate(parts) if parts else np.zeros(0)


class DenseNet:
    def __init__(self, weights, biases, output_activation: str = "linear"):
        if output_activation not in _ACTIVATIONS:
            raise ValueError(f"output activation must be one of {_ACTIVATIONS}")
        if len(weights) != len(biases) or not weights:
            raise ValueError("need one bias per weight matrix")
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: bad shapes {w.shape}, {b.shape}")
            if i and weights[i - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {i} does not chain onto layer {i - 1}")
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]
        self.output_activation = output_activation
        self.version = 0

    @property
    def dims(self) -> tuple:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    def parameters(self) -> list:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def copy(self) -> "DenseNet":
        return DenseNet(self.weights, self.biases, self.output_activation)

    def touch(self) -> None:
        self.version += 1

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        h = x[None, :] if squeeze else x
        if h.shape[1] != self.weights[0].shape[0]:
            raise ValueError(f"expected input dim {self.weights[0].shape[0]}, got {h.shape[1]}")
        inputs = []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(h)
            h = h @ w + b
            if i < last or self.output_activation == "tanh":
                np.tanh(h, out=h)
        out = h[0] if squeeze else h
        return out, ForwardCache(inputs, h, self.version, squeeze)

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache: ForwardCache, grad_out, param_grads: bool = True) -> Gradients:
        """Gradient of ``sum(output * grad_out)`` w.r.t. parameters and input."""
        if cache.version != self.version:
            raise StaleCacheError("network parameters changed since this forward pass")
        g = np.asarray(grad_out, dtype=np.float64)
        g = g[None, :] if cache.squeeze else g
        if g.shape != cache.output.shape:
            raise ValueError(f"output gradient shape {g.shape} != {cache.output.shape}")
        if self.output_activation == "tanh":
            g = g * (1.0 - cache.output ** 2)
        n = len(self.weights)
        dws, dbs = [None] * n, [None] * n
        for i in range(n - 1, -1, -1):
            h_in = cache.inputs[i]
            if param_grads:
                dws[i] = h_in.T @ g
                dbs[i] = g.sum(axis=0)
            g = g @ self.weights[i].T
            if i > 0:
                g *= 1.0 - h_in ** 2
        return Gradients(dws, dbs, g[0] if cache.squeeze else g)


def init_net(dims, output_activation: str, rng: np.random.Generator, output_bias: float = 0.0,
             final_scale: float = 1e-3) -> DenseNet:
    """Fan-in uniform init; zero hidden biases; shrunken final layer."""
    dims = [int(d) for d in dims]
    if len(dims) < 2 or min(dims) < 1:
        raise ValueError(f"invalid layer dims {dims}")
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = np.zeros(fan_out)
        if i == len(dims) - 2:
            w *= final_scale
            b += output_bias
        weights.append(w)
        biases.append(b)
    return DenseNet(weights, biases, output_activation)


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_net(cls, net: DenseNet, **kwargs) -> "AdamState":
        state = cls(**kwargs)
        state.m = [np.zeros_like(p) for p in net.parameters()]
        state.v = [np.zeros_like(p) for p in net.parameters()]
        return state


def adam_step(net: DenseNet, grads: Gradients, state: AdamState) -> None:
    if not state.m:
        state.m = [np.zeros_like(p) for p in net.parameters()]
        state.v = [np.zeros_like(p) for p in net.parameters()]
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    lr_t = state.learning_rate * np.sqrt(1.0 - b2 ** state.step) / (1.0 - b1 ** state.step)
    grad_list = [g for pair in zip(grads.weights, grads.biases) for g in pair]
    for p, g, m, v in zip(net.parameters(), grad_list, state.m, state.v):
        if g.shape != p.shape:
            raise ValueError("gradient shape does not match parameter")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        # eps scaled so the update equals the textbook m_hat / (sqrt(v_hat) + eps)
        p -= lr_t * m / (np.sqrt(v) + state.eps_adam * np.sqrt(1.0 - b2 ** state.step))
    net.touch()


def polyak_update(target: DenseNet, source: DenseNet, tau: float = 0.98) -> None:
    """``target <- tau * target + (1 - tau) * source``, in place."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    if target.dims != source.dims or target.output_activation != source.output_activation:
        raise ArchitectureMismatchError(f"{target.dims} vs {source.dims}")
    if tau == 1.0:
        return
    for tp, sp in zip(target.parameters(), source.parameters()):
        tp *= tau
        tp += (1.0 - tau) * sp
    target.touch()


def save_net(net: DenseNet, path) -> None:
    """Binary checkpoint: magic, version, activation, layer shapes, then params."""
    dims = net.dims
    header = MAGIC + struct.pack("<III", FORMAT_VERSION, _ACTIVATIONS.index(net.output_activation), len(dims))
    header += struct.pack(f"<{len(dims)}I", *dims)
    body = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in net.parameters())
    Path(path).write_bytes(header + body)


def load_net(path) -> DenseNet:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a network checkpoint")
    off = len(MAGIC)
    version, act, n_dims = struct.unpack_from("<III", raw, off)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off += 12
    dims = struct.unpack_from(f"<{n_dims}I", raw, off)
    off += 4 * n_dims
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = np.frombuffer(raw, dtype="<f8", count=fan_in * fan_out, offset=off).reshape(fan_in, fan_out)
        off += 8 * fan_in * fan_out
        b = np.frombuffer(raw, dtype="<f8", count=fan_out, offset=off)
        off += 8 * fan_out
        weights.append(w.astype(np.float64))
        biases.append(b.astype(np.float64))
    if off != len(raw):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return DenseNet(weights, biases, _ACTIVATIONS[act])
