"""Small float64 layers with hand-written backward passes.

Layers are stateless apart from their hyper-parameters; parameters and BN
running statistics live in :class:`Model` under ``"<layer>.<param>"`` keys.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class LayerClass(enum.Enum):
    CONV = "conv"
    BN = "bn"
    DENSE = "dense"
    OTHER = "other"


class ShapeError(ValueError):
    pass


class Layer:
    name: str
    layer_class = LayerClass.OTHER
    param_names: tuple[str, ...] = ()

    def build(self, in_shape: tuple[int, ...], rng: np.random.Generator):
        """Return ``(out_shape, params, buffers)`` for a per-sample input shape."""
        return in_shape, {}, {}

    def forward(self, x, params, buffers, train: bool, update_stats: bool = True):
        raise NotImplementedError

    def backward(self, dy, cache, params):
        raise NotImplementedError


def _he_normal(rng, shape, fan_in):
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


@dataclass
class Conv2d(Layer):
    name: str
    out_channels: int
    kernel: int = 3
    stride: int = 1
    padding: int = 0

    layer_class = LayerClass.CONV
    param_names = ("weight", "bias")

    def build(self, in_shape, rng):
        if len(in_shape) != 3:
            raise ShapeError(f"{self.name}: conv2d needs (C, H, W) input, got {in_shape}")
        c, h, w = in_shape
        oh = (h + 2 * self.padding - self.kernel) // self.stride + 1
        ow = (w + 2 * self.padding - self.kernel) // self.stride + 1
        if oh <= 0 or ow <= 0:
            raise ShapeError(f"{self.name}: input {in_shape} too small for kernel {self.kernel}")
        fan_in = c * self.kernel * self.kernel
        params = {
            "weight": _he_normal(rng, (self.out_channels, c, self.kernel, self.kernel), fan_in),
            "bias": np.zeros(self.out_channels),
        }
        return (self.out_channels, oh, ow), params, {}

    def _out_size(self, h, w):
        k, s, p = self.kernel, self.stride, self.padding
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1

    def forward(self, x, params, buffers, train, update_stats=True):
        w, b = params["weight"], params["bias"]
        n, c, h, wd = x.shape
        if c != w.shape[1]:
            raise ShapeError(f"{self.name}: expected {w.shape[1]} channels, got {c}")
        k, s, p = self.kernel, self.stride, self.padding
        oh, ow = self._out_size(h, wd)
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        cols = np.empty((n, c, k, k, oh, ow))
        for i in range(k):
            for j in range(k):
                cols[:, :, i, j] = xp[:, :, i:i + s * oh:s, j:j + s * ow:s]
        cols = cols.transpose(0, 4, 5, 1, 2, 3).reshape(n * oh * ow, c * k * k)
        out = cols @ w.reshape(w.shape[0], -1).T + b
        y = out.reshape(n, oh, ow, -1).transpose(0, 3, 1, 2)
        return y, (cols, x.shape)

    def backward(self, dy, cache, params):
        cols, (n, c, h, wd) = cache
        w = params["weight"]
        f = w.shape[0]
        k, s, p = self.kernel, self.stride, self.padding
        oh, ow = dy.shape[2], dy.shape[3]
        d2 = dy.transpose(0, 2, 3, 1).reshape(-1, f)
        dw = (d2.T @ cols).reshape(w.shape)
        db = d2.sum(axis=0)
        dcols = (d2 @ w.reshape(f, -1)).reshape(n, oh, ow, c, k, k).transpose(0, 3, 4, 5, 1, 2)
        dxp = np.zeros((n, c, h + 2 * p, wd + 2 * p))
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + s * oh:s, j:j + s * ow:s] += dcols[:, :, i, j]
        dx = dxp[:, :, p:p + h, p:p + wd] if p else dxp
        return dx, {"weight": dw, "bias": db}


@dataclass
class BatchNorm(Layer):
    name: str
    eps: float = 1e-5
    momentum: float = 0.1

    layer_class = LayerClass.BN
    param_names = ("gamma", "beta")

    def build(self, in_shape, rng):
        c = in_shape[0]
        params = {"gamma": np.ones(c), "beta": np.zeros(c)}
        buffers = {"running_mean": np.zeros(c), "running_var": np.ones(c)}
        return in_shape, params, buffers

    @staticmethod
    def _axes(x):
        return (0, 2, 3) if x.ndim == 4 else (0,)

    @staticmethod
    def _bcast(v, x):
        return v.reshape(1, -1, 1, 1) if x.ndim == 4 else v.reshape(1, -1)

    def forward(self, x, params, buffers, train, update_stats=True):
        axes = self._axes(x)
        gamma = self._bcast(params["gamma"], x)
        beta = self._bcast(params["beta"], x)
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            if update_stats:
                m = x.size // x.shape[1]
                unbiased = var * m / max(m - 1, 1)
                buffers["running_mean"] = (1 - self.momentum) * buffers["running_mean"] + self.momentum * mean
                buffers["running_var"] = (1 - self.momentum) * buffers["running_var"] + self.momentum * unbiased
        else:
            mean, var = buffers["running_mean"], buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - self._bcast(mean, x)) * self._bcast(inv_std, x)
        return gamma * xhat + beta, (xhat, inv_std, train)

    def backward(self, dy, cache, params):
        xhat, inv_std, train = cache
        axes = self._axes(dy)
        dgamma = (dy * xhat).sum(axis=axes)
        dbeta = dy.sum(axis=axes)
        dxhat = dy * self._bcast(params["gamma"], dy)
        if not train:
            return dxhat * self._bcast(inv_std, dy), {"gamma": dgamma, "beta": dbeta}
        m = dy.size // dy.shape[1]
        sum_dxhat = self._bcast(dxhat.sum(axis=axes), dy)
        sum_dxhat_xhat = self._bcast((dxhat * xhat).sum(axis=axes), dy)
        dx = self._bcast(inv_std, dy) / m * (m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
        return dx, {"gamma": dgamma, "beta": dbeta}


@dataclass
class Dense(Layer):
    name: str
    out_features: int

    layer_class = LayerClass.DENSE
    param_names = ("weight", "bias")

    def build(self, in_shape, rng):
        if len(in_shape) != 1:
            raise ShapeError(f"{self.name}: dense needs flat input, got {in_shape}; add a flatten layer")
        fan_in = in_shape[0]
        params = {
            "weight": _he_normal(rng, (fan_in, self.out_features), fan_in),
            "bias": np.zeros(self.out_features),
        }
        return (self.out_features,), params, {}

    def forward(self, x, params, buffers, train, update_stats=True):
        if x.ndim != 2 or x.shape[1] != params["weight"].shape[0]:
            raise ShapeError(f"{self.name}: expected (N, {params['weight'].shape[0]}) input, got {x.shape}")
        return x @ params["weight"] + params["bias"], x

    def backward(self, dy, cache, params):
        x = cache
        return dy @ params["weight"].T, {"weight": x.T @ dy, "bias": dy.sum(axis=0)}


@dataclass
class ReLU(Layer):
    name: str = "relu"

    def forward(self, x, params, buffers, train, update_stats=True):
        mask = x > 0
        return x * mask, mask

    def backward(self, dy, cache, params):
        return dy * cache, {}


@dataclass
class Flatten(Layer):
    name: str = "flatten"

    def build(self, in_shape, rng):
        return (int(np.prod(in_shape)),), {}, {}

    def forward(self, x, params, buffers, train, update_stats=True):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy, cache, params):
        return dy.reshape(cache), {}


LAYER_TYPES = {
    "conv2d": Conv2d,
    "batchnorm": BatchNorm,
    "dense": Dense,
    "relu": ReLU,
    "flatten": Flatten,
}


def layer_from_dict(spec: dict, index: int) -> Layer:
    spec = dict(spec)
    kind = spec.pop("type", None)
    if kind not in LAYER_TYPES:
        raise ShapeError(f"layer {index}: unknown type {kind!r}")
    spec.setdefault("name", f"{kind}{index}")
    return LAYER_TYPES[kind](**spec)


class Model:
    """A sequential network with named parameters and BN buffers."""

    def __init__(self, layers: list[Layer], input_shape: tuple[int, ...], seed: int = 0):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise ShapeError(f"duplicate layer names in {names}")
        rng = np.random.default_rng(seed)
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, dict[str, np.ndarray]] = {}
        shape = self.input_shape
        for layer in self.layers:
            shape, params, buffers = layer.build(shape, rng)
            for key, value in params.items():
                self.params[f"{layer.name}.{key}"] = value
            self.buffers[layer.name] = buffers
        self.output_shape = shape

    @classmethod
    def from_topology(cls, topology: list[dict], input_shape, seed: int = 0) -> "Model":
        return cls([layer_from_dict(d, i) for i, d in enumerate(topology)], input_shape, seed)

    def layer_params(self, layer: Layer) -> dict[str, np.ndarray]:
        return {key: self.params[f"{layer.name}.{key}"] for key in layer.param_names}

    @property
    def param_layers(self) -> list[Layer]:
        return [layer for layer in self.layers if layer.param_names]

    def state_dict(self) -> dict[str, np.ndarray]:
        state = dict(self.params)
        for name, buffers in self.buffers.items():
            for key, value in buffers.items():
                state[f"{name}.{key}"] = value
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for key in self.params:
            if key not in state:
                raise KeyError(f"checkpoint has no tensor {key!r}")
            if state[key].shape != self.params[key].shape:
                raise ShapeError(f"{key}: shape {state[key].shape} != {self.params[key].shape}")
            self.params[key] = np.array(state[key], dtype=np.float64)
        for name, buffers in self.buffers.items():
            for key in buffers:
                full = f"{name}.{key}"
                if full in state:
                    buffers[key] = np.array(state[full], dtype=np.float64)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient with respect to the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    n = logits.shape[0]
    loss = -float(logp[np.arange(n), labels].mean())
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n
