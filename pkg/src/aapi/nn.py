"""Small dense networks with hand-written reverse mode and Adam, in float64.

Parameters live in one flat vector ``theta``; per-layer weights and biases
are views into it, so flattening is free and exact.  Weights are stored
``(fan_in, fan_out)`` and a layer computes ``act(x @ W + b)``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError, NonFiniteError, StaleTapeError

ACTIVATIONS = ("tanh", "relu", "identity")

try:
    from . import _kernels
except ImportError:  # pragma: no cover - numba missing
    _kernels = None

# Three-layer nets go through compiled kernels unless AAPI_NO_JIT is set.
USE_KERNELS = _kernels is not None and not os.environ.get("AAPI_NO_JIT")


class DenseNet:
    def __init__(self, sizes: Sequence[int], activations: Sequence[str],
                 theta: Optional[np.ndarray] = None):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or len(activations) != len(sizes) - 1:
            raise ValueError("need one activation per layer")
        for act in activations:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        self.sizes = sizes
        self.activations = list(activations)
        self.blocks = []
        offset = 0
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            self.blocks.append((f"layer{i}.weight", slice(offset, offset + fan_in * fan_out),
                                (fan_in, fan_out)))
            offset += fan_in * fan_out
            self.blocks.append((f"layer{i}.bias", slice(offset, offset + fan_out), (fan_out,)))
            offset += fan_out
        self.n_params = offset
        self.theta = np.zeros(offset)
        self.version = 0
        self._bind()
        if theta is not None:
            self.set_params(theta)

    def _bind(self):
        self.layers = []
        for i in range(0, len(self.blocks), 2):
            _, ws, wshape = self.blocks[i]
            _, bs, _ = self.blocks[i + 1]
            self.layers.append((self.theta[ws].reshape(wshape), self.theta[bs]))
        self._fast = len(self.layers) == 3 and _kernels is not None
        if self._fast:
            self._codes = tuple(_kernels.ACT_CODES[a] for a in self.activations)
            self._offs = np.array([b[1].start for b in self.blocks] + [self.n_params], dtype=np.int64)
            self._flat_layers = tuple(arr for layer in self.layers for arr in layer)

    @classmethod
    def init(cls, sizes: Sequence[int], activations: Sequence[str],
             rng: np.random.Generator) -> "DenseNet":
        """Uniform fan-in initialisation, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``."""
        net = cls(sizes, activations)
        for i, fan_in in enumerate(net.sizes[:-1]):
            bound = 1.0 / np.sqrt(fan_in)
            for _, sl, _ in net.blocks[2 * i:2 * i + 2]:
                net.theta[sl] = rng.uniform(-bound, bound, sl.stop - sl.start)
        return net

    @classmethod
    def mlp(cls, n_in: int, n_out: int, rng: np.random.Generator,
            hidden: Sequence[int] = (64, 64), hidden_act: str = "tanh",
            out_act: str = "identity") -> "DenseNet":
        sizes = [n_in, *hidden, n_out]
        return cls.init(sizes, [hidden_act] * len(hidden) + [out_act], rng)

    @property
    def n_in(self) -> int:
        return self.sizes[0]

    @property
    def n_out(self) -> int:
        return self.sizes[-1]

    def set_params(self, theta: np.ndarray) -> None:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise DimensionError("theta", (self.n_params,), theta.shape)
        self.theta[:] = theta
        self.version += 1

    def copy(self) -> "DenseNet":
        return DenseNet(self.sizes, self.activations, self.theta.copy())

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return forward(self, x)[0]

    def unflatten(self, theta: Optional[np.ndarray] = None) -> list:
        """Per-layer ``(W, b)`` copies of ``theta`` (default: current params)."""
        theta = self.theta if theta is None else np.asarray(theta, dtype=float)
        out = []
        for i in range(0, len(self.blocks), 2):
            _, ws, wshape = self.blocks[i]
            _, bs, _ = self.blocks[i + 1]
            out.append((theta[ws].reshape(wshape).copy(), theta[bs].copy()))
        return out

    def flatten(self, layers: list) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b.ravel()]) for w, b in layers])

    def to_json(self) -> dict:
        return {
            "sizes": self.sizes,
            "activations": self.activations,
            "weights": [[w.tolist(), b.tolist()] for w, b in self.unflatten()],
        }

    @classmethod
    def from_json(cls, doc) -> "DenseNet":
        if isinstance(doc, str):
            doc = json.loads(doc)
        net = cls(doc["sizes"], doc["activations"])
        layers = [(np.array(w, dtype=float), np.array(b, dtype=float)) for w, b in doc["weights"]]
        net.set_params(net.flatten(layers))
        return net


class Tape:
    __slots__ = ("net", "version", "inputs", "outputs", "squeeze")

    def __init__(self, net, version, inputs, outputs, squeeze):
        self.net = net
        self.version = version
        self.inputs = inputs
        self.outputs = outputs
        self.squeeze = squeeze


def forward(net: DenseNet, x: np.ndarray):
    """Run the network on a batch ``(B, n_in)`` or a single row ``(n_in,)``.

    Returns ``(y, tape)``.
    """
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[-1] != net.n_in:
        raise DimensionError("input", net.n_in, x.shape[-1])
    if USE_KERNELS and net._fast:
        x = np.ascontiguousarray(x)
        h1, h2, y = _kernels.forward3(x, *net._flat_layers, *net._codes)
        tape = Tape(net, net.version, [x, h1, h2], [h1, h2, y], squeeze)
        return (y[0] if squeeze else y), tape
    inputs, outputs = [], []
    h = x
    for (w, b), act in zip(net.layers, net.activations):
        inputs.append(h)
        z = h @ w
        z += b
        if act == "tanh":
            np.tanh(z, out=z)
        elif act == "relu":
            np.maximum(z, 0.0, out=z)
        outputs.append(z)
        h = z
    tape = Tape(net, net.version, inputs, outputs, squeeze)
    return (h[0] if squeeze else h), tape


def backward(tape: Tape, upstream: np.ndarray, need_params: bool = True):
    """Gradients of ``<upstream, y>`` w.r.t. the flat parameters and the input.

    With ``need_params=False`` only the input gradient is formed and the first
    element of the result is ``None``.
    """
    net = tape.net
    if net.version != tape.version:
        raise StaleTapeError("network parameters changed since this tape was recorded")
    g = np.asarray(upstream, dtype=float)
    if tape.squeeze:
        g = g[None, :]
    if g.shape != tape.outputs[-1].shape:
        raise DimensionError("upstream", tape.outputs[-1].shape, g.shape)
    grad = np.empty(net.n_params) if need_params else None
    if USE_KERNELS and net._fast:
        (w1, _, w2, _, w3, _) = net._flat_layers
        gx = _kernels.backward3(*tape.inputs, tape.outputs[-1], w1, w2, w3, *net._codes,
                                np.ascontiguousarray(g), grad if need_params else np.empty(0),
                                net._offs, need_params)
        return grad, (gx[0] if tape.squeeze else gx)
    for i in range(len(net.layers) - 1, -1, -1):
        w, _ = net.layers[i]
        act = net.activations[i]
        out = tape.outputs[i]
        if act == "tanh":
            g = g * (1.0 - out * out)
        elif act == "relu":
            g = g * (out > 0.0)
        if need_params:
            _, ws, wshape = net.blocks[2 * i]
            _, bs, _ = net.blocks[2 * i + 1]
            grad[ws] = (tape.inputs[i].T @ g).ravel()
            grad[bs] = g.sum(0)
        g = g @ w.T
    grad_input = g[0] if tape.squeeze else g
    return grad, grad_input


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_num: float = 1e-8
    step: int = 0
    blocks: list = field(default_factory=list)

    @classmethod
    def like(cls, net_or_theta, lr: float = 3e-4, **kw) -> "AdamState":
        if isinstance(net_or_theta, DenseNet):
            n = net_or_theta.n_params
            blocks = [(name, sl) for name, sl, _ in net_or_theta.blocks]
        else:
            n = len(net_or_theta)
            blocks = [("theta", slice(0, n))]
        return cls(np.zeros(n), np.zeros(n), lr=lr, blocks=blocks, **kw)


def adam_step(theta: np.ndarray, grad: np.ndarray, state: AdamState) -> np.ndarray:
    """Bias-corrected Adam update; returns the new parameters, advances ``state``."""
    theta = np.asarray(theta, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if grad.shape != theta.shape or state.m.shape != theta.shape:
        raise DimensionError("theta", theta.shape, grad.shape)
    if not np.all(np.isfinite(grad)):
        bad = [name for name, sl in state.blocks if not np.all(np.isfinite(grad[sl]))]
        raise NonFiniteError(f"non-finite gradient in {', '.join(bad) or 'theta'}")
    state.step += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * grad
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    return theta - state.lr * m_hat / (np.sqrt(v_hat) + state.eps_num)


def clip_grad_norm(grad: np.ndarray, max_norm: float) -> np.ndarray:
    norm = float(np.sqrt(grad @ grad))
    if norm > max_norm:
        return grad * (max_norm / (norm + 1e-6))
    return grad


def soft_update(target: DenseNet, source: DenseNet, tau: float) -> None:
    """``target <- target + tau * (source - target)``."""
    target.set_params(target.theta + tau * (source.theta - target.theta))
