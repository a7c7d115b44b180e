"""Class-weighted cross-entropy and the Adam optimiser."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DivergenceError, InvalidInputError, NumericalError
from .models import Model, softmax


def class_weights(labels, n_classes: int = 3, scheme: str = "inverse-frequency") -> np.ndarray:
    """``N / (K * N_k)`` per class; absent classes get weight 0."""
    if scheme == "uniform":
        return np.ones(n_classes)
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=n_classes)[:n_classes].astype(float)
    total = counts.sum()
    return np.divide(total, n_classes * counts, out=np.zeros(n_classes), where=counts > 0)


def loss(logits, labels, weights=None) -> tuple[float, np.ndarray]:
    """Mean weighted negative log-likelihood and its gradient w.r.t. logits."""
    logits = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if y.shape != (n,):
        raise InvalidInputError(f"expected {n} labels, got shape {y.shape}")
    if y.size and (y.min() < 0 or y.max() >= k):
        raise InvalidInputError(f"labels must lie in [0, {k})")
    w = np.ones(k) if weights is None else np.asarray(weights, dtype=np.float64)
    z = logits - logits.max(axis=1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    wy = w[y]
    value = float(np.mean(-wy * log_p[np.arange(n), y]))
    grad = softmax(logits)
    grad[np.arange(n), y] -= 1.0
    grad *= (wy / n)[:, None]
    return value, grad


def backward(model: Model, batch, labels, weights=None) -> dict[str, np.ndarray]:
    """Analytic gradients of the mean weighted loss for every parameter."""
    logits, cache = model.forward(batch, keep_cache=True)
    _, dlogits = loss(logits, labels, weights)
    grads = model.backward(cache, dlogits)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in layer parameter {name!r}")
    return grads


def loss_and_grads(model: Model, batch, labels, weights=None):
    logits, cache = model.forward(batch, keep_cache=True)
    value, dlogits = loss(logits, labels, weights)
    return value, model.backward(cache, dlogits)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params, grads, state: AdamState, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, applied in place; returns (params, state)."""
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype, copy=False)
        if not np.all(np.isfinite(p)):
            raise DivergenceError(f"parameter {name!r} became non-finite after Adam step {state.t}")
    return params, state
