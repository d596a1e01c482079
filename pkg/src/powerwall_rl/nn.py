"""Small dense networks with hand-written backprop and Adam.

All parameters of an :class:`Mlp` live in one flat float64 vector; each layer's
weights and biases are views into it. Gradients come back in the same flat
layout, so optimizers and gradient clipping work on plain vectors.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from numba import njit

ACTIVATIONS = ("tanh", "identity")
CHECKPOINT_VERSION = 1


class NetError(ValueError):
    pass


class DimensionMismatch(NetError):
    pass


class StaleCache(NetError):
    pass


class ShapeMismatch(NetError):
    pass


class NonFiniteGradient(NetError):
    pass


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    biases: np.ndarray   # (out,)
    activation: str

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]


class Mlp:
    def __init__(self, sizes: Sequence[int], activations: Sequence[str],
                 params: np.ndarray | None = None):
        sizes = tuple(int(s) for s in sizes)
        activations = tuple(activations)
        if len(sizes) < 2 or len(activations) != len(sizes) - 1:
            raise NetError("need len(activations) == len(sizes) - 1 >= 1")
        bad = [a for a in activations if a not in ACTIVATIONS]
        if bad:
            raise NetError(f"unknown activation(s) {bad}")
        self.sizes = sizes
        self.activations = activations
        n = sum(o * i + o for i, o in zip(sizes, sizes[1:]))
        if params is None:
            params = np.zeros(n)
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (n,):
            raise ShapeMismatch(f"expected {n} parameters, got {params.shape}")
        self.params = params
        self.layers = [DenseLayer(w, b, act)
                       for (w, b), act in zip(self.views(params), activations)]
        # compact description for compiled callers; 1 = tanh, 0 = identity
        self.size_array = np.array(sizes, dtype=np.int64)
        self.act_array = np.array([a == "tanh" for a in activations], dtype=np.int64)

    def views(self, flat: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        """(weights, biases) views of a flat vector laid out like ``params``."""
        out = []
        off = 0
        for i, o in zip(self.sizes, self.sizes[1:]):
            w = flat[off:off + o * i].reshape(o, i)
            off += o * i
            out.append((w, flat[off:off + o]))
            off += o
        return out

    @classmethod
    def initialized(cls, sizes: Sequence[int], rng: np.random.Generator,
                    hidden: str = "tanh", output: str = "identity") -> "Mlp":
        """Glorot-uniform weights, zero biases."""
        acts = [hidden] * (len(sizes) - 2) + [output]
        net = cls(sizes, acts)
        for layer in net.layers:
            limit = np.sqrt(6.0 / (layer.n_in + layer.n_out))
            layer.weights[...] = rng.uniform(-limit, limit, size=layer.weights.shape)
        return net

    def copy(self) -> "Mlp":
        return Mlp(self.sizes, self.activations, self.params.copy())

    def __repr__(self) -> str:
        return f"Mlp({'->'.join(map(str, self.sizes))})"


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]   # input to each layer, always 2-D
    outputs: list[np.ndarray]  # post-activation output of each layer
    squeeze: bool


def forward(net: Mlp, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Evaluate ``net`` on one input vector or a batch of row vectors."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    a = x[None, :] if squeeze else x
    if a.ndim != 2 or a.shape[1] != net.sizes[0]:
        raise DimensionMismatch(f"input shape {x.shape}, expected (..., {net.sizes[0]})")
    inputs, outputs = [], []
    for layer in net.layers:
        inputs.append(a)
        a = a @ layer.weights.T
        a += layer.biases
        if layer.activation == "tanh":
            np.tanh(a, out=a)
        outputs.append(a)
    return (a[0] if squeeze else a), ForwardCache(inputs, outputs, squeeze)


def backward(net: Mlp, cache: ForwardCache,
             grad_output: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reverse-mode pass. Returns (flat parameter gradient, input gradient).

    ``grad_output`` is dL/d(output) with the same shape ``forward`` returned.
    """
    g = np.asarray(grad_output, dtype=np.float64)
    if cache.squeeze:
        g = g[None, :]
    if (len(cache.inputs) != len(net.layers) or g.shape != cache.outputs[-1].shape
            or any(a.shape[1] != l.n_in for a, l in zip(cache.inputs, net.layers))):
        raise StaleCache("cache does not match this network / gradient shape")
    grad = np.empty_like(net.params)
    views = net.views(grad)
    for layer, (gw, gb), a_in, a_out in zip(reversed(net.layers), reversed(views),
                                            reversed(cache.inputs), reversed(cache.outputs)):
        if layer.activation == "tanh":
            g = g * (1.0 - a_out * a_out)
        np.dot(g.T, a_in, out=gw)
        np.sum(g, axis=0, out=gb)
        g = g @ layer.weights
    return grad, (g[0] if cache.squeeze else g)


@njit(cache=True)
def forward_row_kernel(params, sizes, acts, x):
    """Single-vector forward pass for compiled loops (mirrors ``forward``)."""
    a = x
    off = 0
    for k in range(sizes.shape[0] - 1):
        n_in = sizes[k]
        n_out = sizes[k + 1]
        w = params[off:off + n_out * n_in].reshape((n_out, n_in))
        off += n_out * n_in
        z = np.dot(w, a) + params[off:off + n_out]
        off += n_out
        if acts[k] == 1:
            z = np.tanh(z)
        a = z
    return a


@njit(cache=True, fastmath=True)
def _adam_kernel(params, grads, m, v, step, lr, beta1, beta2, eps):
    c1 = 1.0 - beta1 ** step
    c2 = 1.0 - beta2 ** step
    for i in range(params.shape[0]):
        g = grads[i]
        m[i] = beta1 * m[i] + (1.0 - beta1) * g
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g
        params[i] -= lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + eps)


@njit(cache=True)
def _clip_norm_kernel(grads, max_norm):
    norm = np.sqrt(np.dot(grads, grads))
    if norm > max_norm:
        grads *= max_norm / (norm + 1e-12)
    return norm


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-shifted softmax over the last axis."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


softmax_logits_to_distribution = softmax


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    learning_rate: float = 0.003
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: np.ndarray, learning_rate: float = 0.003, **kw) -> "AdamState":
        return cls(np.zeros_like(params), np.zeros_like(params), 0, learning_rate, **kw)

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.step, self.learning_rate,
                         self.beta1, self.beta2, self.eps)


def adam_step(params: np.ndarray, grads: np.ndarray,
              state: AdamState) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam descent step; ``params`` and ``state`` update in place."""
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ShapeMismatch(f"params {params.shape}, grads {grads.shape}, moments {state.m.shape}")
    if not np.all(np.isfinite(grads)):
        raise NonFiniteGradient("gradient contains NaN or inf")
    state.step += 1
    _adam_kernel(params, np.asarray(grads, dtype=np.float64), state.m, state.v, state.step,
                 state.learning_rate, state.beta1, state.beta2, state.eps)
    return params, state


def clip_grad_norm(grads: np.ndarray, max_norm: float) -> float:
    """Scale ``grads`` in place to L2 norm <= max_norm; returns the original norm."""
    return float(_clip_norm_kernel(grads, max_norm))


# ----------------------------------------------------------------- checkpoints


def save_checkpoint(path: str | Path, nets: dict[str, Mlp]) -> None:
    arrays: dict[str, np.ndarray] = {"format_version": np.array(CHECKPOINT_VERSION),
                                     "names": np.array(sorted(nets))}
    for name, net in nets.items():
        arrays[f"{name}.sizes"] = np.array(net.sizes, dtype=np.int64)
        arrays[f"{name}.activations"] = np.array(net.activations)
        arrays[f"{name}.params"] = net.params
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("wb") as fh:
        np.savez(fh, **arrays)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> dict[str, Mlp]:
    with np.load(Path(path), allow_pickle=False) as z:
        version = int(z["format_version"])
        if version != CHECKPOINT_VERSION:
            raise NetError(f"unsupported checkpoint version {version}")
        return {
            str(name): Mlp(z[f"{name}.sizes"].tolist(),
                           [str(a) for a in z[f"{name}.activations"]],
                           z[f"{name}.params"].copy())
            for name in z["names"]
        }
