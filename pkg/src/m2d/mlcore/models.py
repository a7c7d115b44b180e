"""Model definitions: forward passes with caches and matching backward passes."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..errors import ConfigError, ShapeError

LOG_EPS = 1e-6

ARCHITECTURES = ("CompactConv", "RecurrentNet")


@dataclass(frozen=True)
class ModelSpec:
    arch: str = "CompactConv"
    n_channels: int = 16
    n_samples: int = 125
    n_classes: int = 3
    temporal_filters: int = 8
    temporal_kernel: int = 13
    spatial_filters: int = 8
    pool_length: int = 25
    pool_stride: int = 12
    hidden: int = 64

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.arch!r}; choose one of {', '.join(ARCHITECTURES)}")
        if self.arch == "CompactConv":
            conv_out = self.n_samples - self.temporal_kernel + 1
            if conv_out < self.pool_length:
                raise ConfigError(
                    f"input width {self.n_samples} too short for kernel {self.temporal_kernel} "
                    f"and pool {self.pool_length}"
                )

    @property
    def input_shape(self) -> tuple[int, int]:
        return self.n_channels, self.n_samples


def glorot(rng, shape, fan_in, fan_out, dtype):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class Model:
    """Parameters live in an ordered dict; ``layers`` groups them for reporting."""

    layers: dict[str, tuple[str, ...]]

    def __init__(self, spec: ModelSpec, seed: int | np.random.Generator = 0, dtype=np.float32):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.params: dict[str, np.ndarray] = self._init_params(rng)

    def _init_params(self, rng) -> dict[str, np.ndarray]:
        raise NotImplementedError

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def astype(self, dtype) -> "Model":
        clone = self.copy()
        clone.dtype = np.dtype(dtype)
        clone.params = {k: v.astype(dtype) for k, v in self.params.items()}
        return clone

    def copy(self) -> "Model":
        clone = object.__new__(type(self))
        clone.spec = self.spec
        clone.dtype = self.dtype
        clone.params = {k: v.copy() for k, v in self.params.items()}
        return clone

    def check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        expected = self.spec.input_shape
        if x.ndim != 3 or x.shape[1:] != expected:
            raise ShapeError(f"expected batch shape (N, {expected[0]}, {expected[1]}), got {x.shape}")
        return np.ascontiguousarray(x, dtype=self.dtype)

    def forward(self, x: np.ndarray, keep_cache: bool = False):
        raise NotImplementedError

    def backward(self, cache, dlogits: np.ndarray) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def logits(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]


class CompactConv(Model):
    """Temporal conv, spatial conv, square, mean pool, log, dense.

    A shallow filter-bank network: the temporal kernels act as band filters,
    the spatial stage mixes all channels, and log mean power feeds a linear
    read-out.
    """

    layers = {
        "temporal": ("temporal.w", "temporal.b"),
        "spatial": ("spatial.w", "spatial.b"),
        "dense": ("dense.w", "dense.b"),
    }

    @property
    def conv_width(self) -> int:
        return self.spec.n_samples - self.spec.temporal_kernel + 1

    @property
    def n_pools(self) -> int:
        return (self.conv_width - self.spec.pool_length) // self.spec.pool_stride + 1

    def _init_params(self, rng):
        s, dt = self.spec, self.dtype
        f1, k, f2, c = s.temporal_filters, s.temporal_kernel, s.spatial_filters, s.n_channels
        feat = f2 * self.n_pools
        return {
            "temporal.w": glorot(rng, (f1, k), k, f1 * k, dt),
            "temporal.b": np.zeros(f1, dt),
            "spatial.w": glorot(rng, (f2, f1, c), f1 * c, f2 * c, dt),
            "spatial.b": np.zeros(f2, dt),
            "dense.w": glorot(rng, (s.n_classes, feat), feat, s.n_classes, dt),
            "dense.b": np.zeros(s.n_classes, dt),
        }

    def pool_matrix(self) -> np.ndarray:
        pm = np.zeros((self.conv_width, self.n_pools), dtype=self.dtype)
        for j in range(self.n_pools):
            a = j * self.spec.pool_stride
            pm[a : a + self.spec.pool_length, j] = 1.0 / self.spec.pool_length
        return pm

    def forward(self, x, keep_cache=False):
        x = self.check_input(x)
        p = self.params
        n = len(x)
        f1, c = self.spec.temporal_filters, self.spec.n_channels
        z1 = kernels.conv_time_forward(x, p["temporal.w"], p["temporal.b"])
        z1f = z1.reshape(n, f1 * c, -1)
        sw = p["spatial.w"].reshape(self.spec.spatial_filters, f1 * c)
        z2 = np.matmul(sw, z1f) + p["spatial.b"][None, :, None]
        pm = self.pool_matrix()
        pooled = np.matmul(z2 * z2, pm)
        feat = np.log(pooled + LOG_EPS).reshape(n, -1)
        logits = feat @ p["dense.w"].T + p["dense.b"]
        cache = (x, z1f, z2, pooled, feat, pm) if keep_cache else None
        return logits, cache

    def backward(self, cache, dlogits):
        x, z1f, z2, pooled, feat, pm = cache
        p = self.params
        n = len(x)
        s = self.spec
        dlogits = dlogits.astype(self.dtype, copy=False)
        grads = {"dense.w": dlogits.T @ feat, "dense.b": dlogits.sum(axis=0)}
        dfeat = (dlogits @ p["dense.w"]).reshape(pooled.shape)
        dsq = np.matmul(dfeat / (pooled + LOG_EPS), pm.T)
        dz2 = 2.0 * z2 * dsq
        grads["spatial.w"] = np.tensordot(dz2, z1f, axes=([0, 2], [0, 2])).reshape(p["spatial.w"].shape)
        grads["spatial.b"] = dz2.sum(axis=(0, 2))
        sw = p["spatial.w"].reshape(s.spatial_filters, -1)
        dz1 = np.matmul(sw.T, dz2).reshape(n, s.temporal_filters, s.n_channels, -1)
        gw, gb = kernels.conv_time_weight_grad(x, np.ascontiguousarray(dz1))
        grads["temporal.w"], grads["temporal.b"] = gw, gb
        return grads


class RecurrentNet(Model):
    """Single gated recurrent layer over time; final hidden state to dense.

    Gate order in the stacked weights is reset, update, candidate.
    """

    layers = {
        "gru": ("gru.w_x", "gru.w_h", "gru.b_x", "gru.b_h"),
        "dense": ("dense.w", "dense.b"),
    }

    def _init_params(self, rng):
        s, dt = self.spec, self.dtype
        h, c = s.hidden, s.n_channels
        bound = 1.0 / math.sqrt(h)
        return {
            "gru.w_x": glorot(rng, (c, 3 * h), c, 3 * h, dt),
            "gru.w_h": rng.uniform(-bound, bound, size=(h, 3 * h)).astype(dt),
            "gru.b_x": np.zeros(3 * h, dt),
            "gru.b_h": np.zeros(3 * h, dt),
            "dense.w": glorot(rng, (s.n_classes, h), h, s.n_classes, dt),
            "dense.b": np.zeros(s.n_classes, dt),
        }

    def forward(self, x, keep_cache=False):
        x = self.check_input(x)
        p = self.params
        n, _, w = x.shape
        h_dim = self.spec.hidden
        xs = np.ascontiguousarray(x.transpose(0, 2, 1))  # (N, W, C)
        gx = xs @ p["gru.w_x"] + p["gru.b_x"]  # (N, W, 3H)
        h = np.zeros((n, h_dim), dtype=self.dtype)
        steps = []
        for t in range(w):
            gh = h @ p["gru.w_h"] + p["gru.b_h"]
            g = gx[:, t]
            r = _sigmoid(g[:, :h_dim] + gh[:, :h_dim])
            z = _sigmoid(g[:, h_dim : 2 * h_dim] + gh[:, h_dim : 2 * h_dim])
            gh_n = gh[:, 2 * h_dim :]
            cand = np.tanh(g[:, 2 * h_dim :] + r * gh_n)
            h_new = (1.0 - z) * cand + z * h
            if keep_cache:
                steps.append((h, r, z, cand, gh_n))
            h = h_new
        logits = h @ p["dense.w"].T + p["dense.b"]
        return logits, ((xs, h, steps) if keep_cache else None)

    def backward(self, cache, dlogits):
        xs, h_last, steps = cache
        p = self.params
        h_dim = self.spec.hidden
        dlogits = dlogits.astype(self.dtype, copy=False)
        grads = {"dense.w": dlogits.T @ h_last, "dense.b": dlogits.sum(axis=0)}
        dh = dlogits @ p["dense.w"]
        dgx = np.empty((xs.shape[0], xs.shape[1], 3 * h_dim), dtype=self.dtype)
        dw_h = np.zeros_like(p["gru.w_h"])
        db_h = np.zeros_like(p["gru.b_h"])
        w_h_t = p["gru.w_h"].T
        for t in range(len(steps) - 1, -1, -1):
            h_prev, r, z, cand, gh_n = steps[t]
            dcand = dh * (1.0 - z)
            dz = dh * (h_prev - cand)
            da_n = dcand * (1.0 - cand * cand)
            da_r = da_n * gh_n * r * (1.0 - r)
            da_z = dz * z * (1.0 - z)
            dgx[:, t, :h_dim] = da_r
            dgx[:, t, h_dim : 2 * h_dim] = da_z
            dgx[:, t, 2 * h_dim :] = da_n
            dgh = np.concatenate([da_r, da_z, da_n * r], axis=1)
            dw_h += h_prev.T @ dgh
            db_h += dgh.sum(axis=0)
            dh = dh * z + dgh @ w_h_t
        flat_x = xs.reshape(-1, xs.shape[2])
        flat_g = dgx.reshape(-1, 3 * h_dim)
        grads["gru.w_x"] = flat_x.T @ flat_g
        grads["gru.b_x"] = flat_g.sum(axis=0)
        grads["gru.w_h"] = dw_h
        grads["gru.b_h"] = db_h
        return grads


_CLASSES = {"CompactConv": CompactConv, "RecurrentNet": RecurrentNet}


def build_model(spec: ModelSpec, seed: int | np.random.Generator = 0, dtype=np.float32) -> Model:
    return _CLASSES[spec.arch](spec, seed, dtype)


def forward(model: Model, batch: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Logits and row-wise softmax probabilities."""
    logits, _ = model.forward(batch)
    return logits, softmax(logits.astype(np.float64))
