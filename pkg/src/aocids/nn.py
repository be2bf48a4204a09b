"""Dense layers with hand-written gradients, optimizers and the LR schedule.

Everything runs in float64. Layers cache what they need on ``forward`` and
accumulate parameter gradients on ``backward``; an optimizer step is the
only thing that mutates parameters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

NORM_FLOOR = 1e-12


class Layer:
    """Base class. Subclasses fill ``params``/``grads`` with matching arrays."""

    def __init__(self) -> None:
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray, training: bool = True) -> np.ndarray:
        raise NotImplementedError

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))


class Affine(Layer):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator | None = None):
        super().__init__()
        if in_dim <= 0 or out_dim <= 0:
            raise ValueError(f"layer dims must be positive, got {in_dim}->{out_dim}")
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = math.sqrt(6.0 / in_dim)
        self.in_dim, self.out_dim = in_dim, out_dim
        self.params = {
            "W": rng.uniform(-bound, bound, size=(out_dim, in_dim)),
            "b": np.zeros(out_dim),
        }
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        self._x: np.ndarray | None = None

    def forward(self, x, training=True):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"expected (n, {self.in_dim}) input, got {x.shape}")
        self._x = x
        return x @ self.params["W"].T + self.params["b"]

    def backward(self, upstream):
        if self._x is None:
            raise RuntimeError("backward called before forward")
        self.grads["W"] += upstream.T @ self._x
        self.grads["b"] += upstream.sum(axis=0)
        return upstream @ self.params["W"]


class BatchNorm(Layer):
    """Per-feature batch normalization (population variance in training)."""

    def __init__(self, dim: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.dim = dim
        self.eps = eps
        self.momentum = momentum
        self.params = {"gamma": np.ones(dim), "beta": np.zeros(dim)}
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self._cache: tuple | None = None

    def forward(self, x, training=True):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ValueError(f"expected (n, {self.dim}) input, got {x.shape}")
        if training:
            n = x.shape[0]
            if n < 2:
                raise ValueError("batch norm needs at least 2 rows in training mode")
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            inv_std = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mean) * inv_std
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * mean
            self.running_var = (1 - m) * self.running_var + m * var * n / (n - 1)
            self._cache = (xhat, inv_std, True)
        else:
            inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = (x - self.running_mean) * inv_std
            self._cache = (xhat, inv_std, False)
        return self.params["gamma"] * xhat + self.params["beta"]

    def backward(self, upstream):
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        xhat, inv_std, training = self._cache
        self.grads["gamma"] += (upstream * xhat).sum(axis=0)
        self.grads["beta"] += upstream.sum(axis=0)
        dxhat = upstream * self.params["gamma"]
        if not training:
            return dxhat * inv_std
        # mean and variance pathways folded into the closed form
        return inv_std * (
            dxhat - dxhat.mean(axis=0) - xhat * (dxhat * xhat).mean(axis=0)
        )


class ReLU(Layer):
    def forward(self, x, training=True):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, upstream):
        return upstream * self._mask


class Sigmoid(Layer):
    def forward(self, x, training=True):
        self._out = sigmoid(x)
        return self._out

    def backward(self, upstream):
        return upstream * self._out * (1.0 - self._out)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activation(kind: str) -> Layer:
    if kind == "relu":
        return ReLU()
    if kind == "sigmoid":
        return Sigmoid()
    raise ValueError(f"unknown activation {kind!r}")


class Sequential(Layer):
    def __init__(self, layers: Iterable[Layer]):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x, training=True):
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, upstream):
        for layer in reversed(self.layers):
            upstream = layer.backward(upstream)
        return upstream

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def n_params(self):
        return count_parameters(self.layers)

    def parameters(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(l.params[k], l.grads[k]) for l in self.layers for k in l.params]


def count_parameters(layers: Iterable[Layer]) -> int:
    """Trainable element count. Batch-norm running statistics are excluded."""
    return int(sum(layer.n_params() for layer in layers))


def cosine_similarity(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"shape mismatch {u.shape} vs {v.shape}")
    nu = max(np.linalg.norm(u), NORM_FLOOR)
    nv = max(np.linalg.norm(v), NORM_FLOOR)
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def row_normalize(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (unit rows, floored row norms)."""
    norms = np.maximum(np.linalg.norm(m, axis=1), NORM_FLOOR)
    return m / norms[:, None], norms


def cosine_to_reference(reps: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Cosine similarity of every row of ``reps`` to a single vector."""
    unit, _ = row_normalize(np.atleast_2d(reps))
    ref = np.asarray(ref, dtype=np.float64)
    ref_unit = ref / max(np.linalg.norm(ref), NORM_FLOOR)
    return np.clip(unit @ ref_unit, -1.0, 1.0)


@dataclass
class Optimizer:
    """SGD or Adam, both with weight decay added to the gradient as L2."""

    kind: str = "adam"
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list, repr=False)
    v: list[np.ndarray] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")

    def step(self, params: list[tuple[np.ndarray, np.ndarray]]) -> None:
        if self.kind == "adam" and not self.m:
            self.m = [np.zeros_like(p) for p, _ in params]
            self.v = [np.zeros_like(p) for p, _ in params]
        self.step_count += 1
        lr = self.learning_rate
        for i, (p, g) in enumerate(params):
            if p.shape != g.shape:
                raise ValueError(f"param/grad shape mismatch {p.shape} vs {g.shape}")
            g = g + self.weight_decay * p if self.weight_decay else g
            if self.kind == "sgd":
                p -= lr * g
                continue
            m, v = self.m[i], self.v[i]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            m_hat = m / (1 - self.beta1 ** self.step_count)
            v_hat = v / (1 - self.beta2 ** self.step_count)
            p -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class CosineSchedule:
    eta_initial: float = 1e-3
    eta_min: float = 1e-5
    t_max: int = 50
    current_epoch: int = 0

    def lr(self) -> float:
        return cosine_anneal_lr(self.eta_initial, self.eta_min, self.t_max, self.current_epoch)


def cosine_anneal_lr(eta_initial: float, eta_min: float, t_max: int, epoch: int) -> float:
    """Cosine-annealed rate; epochs past ``t_max`` stay at ``eta_min``."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    if epoch >= t_max:
        return eta_min
    return eta_min + 0.5 * (eta_initial - eta_min) * (1.0 + math.cos(math.pi * epoch / t_max))
