"""Multilayer perceptron Q-network written against plain numpy.

ReLU hidden layers, linear output (one Q-value per action). Backprop is done
by hand; :func:`numerical_gradient` is the finite-difference cross-check.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .blocks import N_ACTIONS, STATE_WIDTH

_MAGIC = b"DMQN"
_FORMAT_VERSION = 1


class NonFiniteError(FloatingPointError):
    """Raised when a forward or backward pass produces NaN/Inf."""


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def like(cls, net: QNetwork) -> AdamState:
        params = net.weights + net.biases
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


@dataclass
class QNetwork:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def init(cls, sizes: Sequence[int], rng: np.random.Generator) -> QNetwork:
        """He-uniform weights, zero biases. ``sizes`` = (input, *hidden, output)."""
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = np.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @classmethod
    def default(cls, rng: np.random.Generator, hidden: Sequence[int] = (64, 64, 64)) -> QNetwork:
        return cls.init((STATE_WIDTH, *hidden, N_ACTIONS), rng)

    @classmethod
    def zeros(cls, sizes: Sequence[int]) -> QNetwork:
        return cls([np.zeros((i, o)) for i, o in zip(sizes[:-1], sizes[1:])],
                   [np.zeros(o) for o in sizes[1:]])

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    def copy(self) -> QNetwork:
        return QNetwork([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def load_from(self, other: QNetwork) -> None:
        for w, ow in zip(self.weights, other.weights):
            w[...] = ow
        for b, ob in zip(self.biases, other.biases):
            b[...] = ob

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self._forward(x)[-1]

    def _forward(self, x: np.ndarray) -> list[np.ndarray]:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.sizes[0]:
            raise ValueError(f"input width {x.shape[-1]} != network input {self.sizes[0]}")
        acts = [x]
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = acts[-1] @ w + b
            acts.append(z if k == last else np.maximum(z, 0.0))
        if not np.all(np.isfinite(acts[-1])):
            raise NonFiniteError("non-finite Q-values in forward pass")
        return acts

    def q_values(self, state) -> np.ndarray:
        x = state.as_array() if hasattr(state, "as_array") else state
        return self.forward(x)

    def loss_and_grads(self, states: np.ndarray, actions: np.ndarray, targets: np.ndarray
                       ) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
        """Mean squared error between Q(s, a) and ``targets`` and its gradients."""
        acts = self._forward(states)
        q = acts[-1]
        n = q.shape[0]
        rows = np.arange(n)
        err = q[rows, actions] - targets
        loss = float(np.mean(err ** 2))
        delta = np.zeros_like(q)
        delta[rows, actions] = 2.0 * err / n
        gw: list[np.ndarray] = [None] * len(self.weights)  # type: ignore[list-item]
        gb: list[np.ndarray] = [None] * len(self.weights)  # type: ignore[list-item]
        for k in range(len(self.weights) - 1, -1, -1):
            gw[k] = acts[k].T @ delta
            gb[k] = delta.sum(axis=0)
            if k:
                delta = (delta @ self.weights[k].T) * (acts[k] > 0)
        return loss, gw, gb

    def sgd_step(self, gw: list[np.ndarray], gb: list[np.ndarray], lr: float, clip: float | None) -> float:
        """In-place descent step; returns the (pre-clip) gradient norm."""
        norm = float(np.sqrt(sum(np.sum(g * g) for g in gw) + sum(np.sum(g * g) for g in gb)))
        if not np.isfinite(norm):
            raise NonFiniteError("non-finite gradient")
        scale = lr
        if clip is not None and norm > clip:
            scale = lr * clip / norm
        for w, g in zip(self.weights, gw):
            w -= scale * g
        for b, g in zip(self.biases, gb):
            b -= scale * g
        return norm

    def adam_step(self, gw: list[np.ndarray], gb: list[np.ndarray], lr: float, clip: float | None,
                  state: AdamState) -> float:
        """In-place Adam step (gradient clipped by norm first); returns the pre-clip norm."""
        norm = float(np.sqrt(sum(np.sum(g * g) for g in gw) + sum(np.sum(g * g) for g in gb)))
        if not np.isfinite(norm):
            raise NonFiniteError("non-finite gradient")
        scale = clip / norm if clip is not None and norm > clip else 1.0
        state.t += 1
        b1, b2 = state.beta1, state.beta2
        corr = np.sqrt(1 - b2 ** state.t) / (1 - b1 ** state.t)
        for p, g, m, v in zip(self.weights + self.biases, gw + gb, state.m, state.v):
            g = g * scale
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= lr * corr * m / (np.sqrt(v) + state.eps)
        return norm

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.weights + self.biases)

    # -- serialization: little-endian, versioned header

    def to_bytes(self) -> bytes:
        sizes = self.sizes
        head = _MAGIC + struct.pack("<II", _FORMAT_VERSION, len(sizes)) + struct.pack(f"<{len(sizes)}I", *sizes)
        body = b"".join(
            np.ascontiguousarray(w, dtype="<f8").tobytes() + np.ascontiguousarray(b, dtype="<f8").tobytes()
            for w, b in zip(self.weights, self.biases)
        )
        return head + body

    @classmethod
    def from_bytes(cls, data: bytes) -> QNetwork:
        if data[:4] != _MAGIC:
            raise ValueError("not a Q-network weight file")
        version, n = struct.unpack_from("<II", data, 4)
        if version != _FORMAT_VERSION:
            raise ValueError(f"unsupported weight file version {version}")
        sizes = struct.unpack_from(f"<{n}I", data, 12)
        pos = 12 + 4 * n
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            w = np.frombuffer(data, dtype="<f8", count=fan_in * fan_out, offset=pos).reshape(fan_in, fan_out)
            pos += 8 * fan_in * fan_out
            b = np.frombuffer(data, dtype="<f8", count=fan_out, offset=pos)
            pos += 8 * fan_out
            weights.append(w.astype(float))
            biases.append(b.astype(float))
        if pos != len(data):
            raise ValueError("trailing bytes in weight file")
        return cls(weights, biases)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> QNetwork:
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def numerical_gradient(net: QNetwork, states: np.ndarray, actions: np.ndarray, targets: np.ndarray,
                       eps: float = 1e-6) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Central finite differences of the same loss, one parameter at a time."""

    def loss() -> float:
        q = net.forward(states)
        err = q[np.arange(len(actions)), actions] - targets
        return float(np.mean(err ** 2))

    out = []
    for group in (net.weights, net.biases):
        grads = []
        for p in group:
            g = np.zeros_like(p)
            flat, gflat = p.reshape(-1), g.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                up = loss()
                flat[i] = orig - eps
                down = loss()
                flat[i] = orig
                gflat[i] = (up - down) / (2 * eps)
            grads.append(g)
        out.append(grads)
    return out[0], out[1]


def relative_error(a: list[np.ndarray], b: list[np.ndarray]) -> float:
    va = np.concatenate([x.ravel() for x in a])
    vb = np.concatenate([x.ravel() for x in b])
    denom = np.linalg.norm(va) + np.linalg.norm(vb)
    return 0.0 if denom == 0 else float(np.linalg.norm(va - vb) / denom)
