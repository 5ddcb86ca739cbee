"""Layer specifications and forward/backward passes (NHWC, valid padding).

Every layer keeps the values its backward pass needs from the most recent
forward call, so one layer instance serves one pass at a time.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidBatchError, InvalidRateError, ShapeError, StateError
from .optim import softmax
from .tensor import DTYPE, Rng, matmul

KINDS = ("conv2d", "maxpool2d", "dropout", "batchnorm", "flatten", "dense")
ACTIVATIONS = ("relu", "softmax", "none")
BN_EPS = 1e-5
BN_MOMENTUM = 0.9

_FIELDS = {
    "conv2d": ("filters", "kernel", "activation"),
    "maxpool2d": ("pool",),
    "dropout": ("rate",),
    "batchnorm": (),
    "flatten": (),
    "dense": ("units", "activation"),
}
_OPTIONAL = ("filters", "kernel", "pool", "rate", "units", "activation")

# names used in summary tables
DISPLAY_NAMES = {
    "conv2d": "Conv2D",
    "maxpool2d": "MaxPooling2D",
    "dropout": "Dropout",
    "batchnorm": "BatchNormalization",
    "flatten": "Flatten",
    "dense": "Dense",
}

Shape = Tuple[int, ...]


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    filters: Optional[int] = None
    kernel: Optional[int] = None
    pool: Optional[int] = None
    rate: Optional[float] = None
    units: Optional[int] = None
    activation: Optional[str] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        wanted = _FIELDS[self.kind]
        for name in _OPTIONAL:
            value = getattr(self, name)
            if name in wanted and value is None:
                raise ValueError(f"{self.kind} layer requires {name!r}")
            if name not in wanted and value is not None:
                raise ValueError(f"{self.kind} layer does not take {name!r}")
        for name in ("filters", "kernel", "pool", "units"):
            value = getattr(self, name)
            if value is not None and (int(value) != value or value < 1):
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.rate is not None and not 0 <= self.rate < 1:
            raise InvalidRateError(f"dropout rate must lie in [0, 1), got {self.rate}")
        if self.activation is not None and self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @classmethod
    def conv(cls, filters: int, kernel: int = 3, activation: str = "relu") -> "LayerSpec":
        return cls("conv2d", filters=filters, kernel=kernel, activation=activation)

    @classmethod
    def maxpool(cls, pool: int = 2) -> "LayerSpec":
        return cls("maxpool2d", pool=pool)

    @classmethod
    def dropout(cls, rate: float) -> "LayerSpec":
        return cls("dropout", rate=rate)

    @classmethod
    def batchnorm(cls) -> "LayerSpec":
        return cls("batchnorm")

    @classmethod
    def flatten(cls) -> "LayerSpec":
        return cls("flatten")

    @classmethod
    def dense(cls, units: int, activation: str = "relu") -> "LayerSpec":
        return cls("dense", units=units, activation=activation)

    @property
    def stride(self) -> Optional[int]:
        if self.kind == "conv2d":
            return 1
        if self.kind == "maxpool2d":
            return self.pool
        return None

    def fields(self) -> Dict[str, object]:
        """The kind-specific fields in canonical order."""
        return {name: getattr(self, name) for name in _FIELDS[self.kind]}

    def output_shape(self, input_shape: Shape) -> Shape:
        """Per-sample output shape (batch axis excluded)."""
        shape = tuple(input_shape)
        if self.kind == "conv2d":
            _need_rank(self, shape, 3)
            h, w, _ = shape
            if h < self.kernel or w < self.kernel:
                raise ShapeError(f"{self.kernel}x{self.kernel} kernel does not fit {h}x{w} input")
            return (h - self.kernel + 1, w - self.kernel + 1, self.filters)
        if self.kind == "maxpool2d":
            _need_rank(self, shape, 3)
            h, w, c = shape
            if h < self.pool or w < self.pool:
                raise ShapeError(f"{self.pool}x{self.pool} pool window exceeds {h}x{w} input")
            return ((h - self.pool) // self.pool + 1, (w - self.pool) // self.pool + 1, c)
        if self.kind == "flatten":
            return (int(np.prod(shape)),)
        if self.kind == "dense":
            _need_rank(self, shape, 1)
            return (self.units,)
        return shape

    def param_counts(self, input_shape: Shape) -> Tuple[int, int]:
        """``(trainable, non_trainable)`` parameter element counts."""
        if self.kind == "conv2d":
            return (self.kernel * self.kernel * input_shape[-1] + 1) * self.filters, 0
        if self.kind == "dense":
            _need_rank(self, tuple(input_shape), 1)
            return (input_shape[0] + 1) * self.units, 0
        if self.kind == "batchnorm":
            return 2 * input_shape[-1], 2 * input_shape[-1]
        return 0, 0


def _need_rank(spec: LayerSpec, shape: Shape, rank: int):
    if len(shape) != rank:
        raise ShapeError(f"{spec.kind} expects rank-{rank} per-sample input, got {shape}")


def im2col(x: np.ndarray, k: int) -> np.ndarray:
    """Unroll KxK valid patches of an NHWC batch into rows ordered (di, dj, c)."""
    n, h, w, c = x.shape
    ho, wo = h - k + 1, w - k + 1
    win = sliding_window_view(x, (k, k), axis=(1, 2))  # (n, ho, wo, c, k, k)
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, k * k * c)


def col2im(cols: np.ndarray, x_shape: Shape, k: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add patch rows back onto the input grid."""
    n, h, w, c = x_shape
    ho, wo = h - k + 1, w - k + 1
    patches = cols.reshape(n, ho, wo, k, k, c)
    out = np.zeros(x_shape, dtype=cols.dtype)
    for di in range(k):
        for dj in range(k):
            out[:, di:di + ho, dj:dj + wo, :] += patches[:, :, :, di, dj, :]
    return out


class Layer:
    """Base class: ``params``/``grads`` hold trainable tensors, ``buffers`` the rest."""

    def __init__(self, spec: LayerSpec, input_shape: Shape, dtype=DTYPE):
        self.spec = spec
        self.input_shape = tuple(input_shape)
        self.output_shape = spec.output_shape(self.input_shape)
        self.dtype = np.dtype(dtype)
        self.params: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}
        self.buffers: Dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x: np.ndarray, training: bool = False, rng: Optional[Rng] = None) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _cached(self):
        if self._cache is None:
            raise StateError(f"{self.spec.kind}: backward called without a cached forward pass")
        return self._cache

    def state_arrays(self) -> List[Tuple[str, np.ndarray]]:
        """Every persisted array (trainable first, then buffers) in a fixed order."""
        return list(self.params.items()) + list(self.buffers.items())

    def astype(self, dtype) -> "Layer":
        self.dtype = np.dtype(dtype)
        for store in (self.params, self.buffers):
            for name in store:
                store[name] = store[name].astype(dtype)
        self.grads = {}
        self._cache = None
        return self


def _relu_backward(grad: np.ndarray, mask: Optional[np.ndarray]) -> np.ndarray:
    return grad if mask is None else grad * mask


class Conv2D(Layer):
    def __init__(self, spec, input_shape, dtype=DTYPE):
        super().__init__(spec, input_shape, dtype)
        k, cin = spec.kernel, self.input_shape[-1]
        self.params = {
            "weight": np.zeros((k, k, cin, spec.filters), dtype=dtype),
            "bias": np.zeros(spec.filters, dtype=dtype),
        }

    def forward(self, x, training=False, rng=None):
        k, cout = self.spec.kernel, self.spec.filters
        if x.ndim != 4 or x.shape[-1] != self.input_shape[-1]:
            raise ShapeError(f"conv2d expects (N, H, W, {self.input_shape[-1]}) input, got {x.shape}")
        n, h, w, _ = x.shape
        if h < k or w < k:
            raise ShapeError(f"{k}x{k} kernel larger than {h}x{w} input")
        ho, wo = h - k + 1, w - k + 1
        cols = im2col(x, k)
        wmat = self.params["weight"].reshape(-1, cout)
        z = (matmul(cols, wmat) + self.params["bias"]).reshape(n, ho, wo, cout)
        mask = None
        if self.spec.activation == "relu":
            mask = z > 0
            z = z * mask
        self._cache = (x.shape, cols, mask)
        return z

    def backward(self, grad_out):
        x_shape, cols, mask = self._cached()
        cout = self.spec.filters
        g = _relu_backward(grad_out, mask).reshape(-1, cout)
        wmat = self.params["weight"].reshape(-1, cout)
        self.grads = {
            "weight": matmul(cols.T, g).reshape(self.params["weight"].shape),
            "bias": g.sum(axis=0, dtype=np.float64).astype(self.dtype),
        }
        return col2im(matmul(g, wmat.T), x_shape, self.spec.kernel)


class MaxPool2D(Layer):
    def forward(self, x, training=False, rng=None):
        p = self.spec.pool
        if x.ndim != 4:
            raise ShapeError(f"maxpool2d expects rank-4 input, got {x.shape}")
        n, h, w, c = x.shape
        if h < p or w < p:
            raise ShapeError(f"{p}x{p} pool window exceeds {h}x{w} input")
        ho, wo = h // p, w // p
        win = (
            x[:, : ho * p, : wo * p, :]
            .reshape(n, ho, p, wo, p, c)
            .transpose(0, 1, 3, 5, 2, 4)
            .reshape(n, ho, wo, c, p * p)
        )
        # argmax returns the first maximum in row-major window order
        idx = win.argmax(axis=-1)
        out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
        self._cache = (x.shape, idx)
        return out

    def backward(self, grad_out):
        x_shape, idx = self._cached()
        p = self.spec.pool
        n, h, w, c = x_shape
        ho, wo = h // p, w // p
        win = np.zeros((n, ho, wo, c, p * p), dtype=grad_out.dtype)
        np.put_along_axis(win, idx[..., None], grad_out[..., None], axis=-1)
        grad_in = np.zeros(x_shape, dtype=grad_out.dtype)
        grad_in[:, : ho * p, : wo * p, :] = (
            win.reshape(n, ho, wo, c, p, p).transpose(0, 1, 4, 2, 5, 3).reshape(n, ho * p, wo * p, c)
        )
        return grad_in


class Dropout(Layer):
    """Inverted dropout: survivors are scaled by ``1 / (1 - rate)`` at train time."""

    def forward(self, x, training=False, rng=None):
        rate = self.spec.rate
        if not training or rate == 0:
            self._cache = None if not training else np.ones((), dtype=x.dtype)
            self._identity = True
            return x
        if rng is None:
            raise StateError("dropout in training mode needs an Rng")
        keep = rng.random(x.shape) >= rate
        mask = (keep / (1.0 - rate)).astype(x.dtype)
        self._cache = mask
        self._identity = False
        return x * mask

    def backward(self, grad_out):
        if getattr(self, "_identity", False):
            return grad_out
        return grad_out * self._cached()


class BatchNorm(Layer):
    """Per-channel normalization over every axis except the last."""

    def __init__(self, spec, input_shape, dtype=DTYPE):
        super().__init__(spec, input_shape, dtype)
        c = self.input_shape[-1]
        self.params = {"gamma": np.ones(c, dtype=dtype), "beta": np.zeros(c, dtype=dtype)}
        self.buffers = {"running_mean": np.zeros(c, dtype=dtype), "running_var": np.ones(c, dtype=dtype)}

    def forward(self, x, training=False, rng=None):
        c = self.input_shape[-1]
        if x.shape[-1] != c:
            raise ShapeError(f"batchnorm expects {c} channels, got {x.shape[-1]}")
        if x.shape[0] == 0:
            raise InvalidBatchError("batchnorm received an empty batch")
        axes = tuple(range(x.ndim - 1))
        x64 = x.astype(np.float64)
        if training:
            mean = x64.mean(axis=axes)
            var = x64.var(axis=axes)
            rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
            rm[...] = BN_MOMENTUM * rm + (1 - BN_MOMENTUM) * mean
            rv[...] = BN_MOMENTUM * rv + (1 - BN_MOMENTUM) * var
        else:
            mean = self.buffers["running_mean"].astype(np.float64)
            var = self.buffers["running_var"].astype(np.float64)
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (x64 - mean) * inv_std
        out = self.params["gamma"] * xhat + self.params["beta"]
        self._cache = (xhat, inv_std, training)
        return out.astype(x.dtype)

    def backward(self, grad_out):
        xhat, inv_std, training = self._cached()
        axes = tuple(range(grad_out.ndim - 1))
        g = grad_out.astype(np.float64)
        gamma = self.params["gamma"].astype(np.float64)
        self.grads = {
            "gamma": (g * xhat).sum(axis=axes).astype(self.dtype),
            "beta": g.sum(axis=axes).astype(self.dtype),
        }
        dxhat = g * gamma
        if not training:
            return (dxhat * inv_std).astype(grad_out.dtype)
        m = g.size // g.shape[-1]
        dx = (inv_std / m) * (
            m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes)
        )
        return dx.astype(grad_out.dtype)


class Flatten(Layer):
    def forward(self, x, training=False, rng=None):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out):
        return grad_out.reshape(self._cached())


def unflatten(x: np.ndarray, shape: Shape) -> np.ndarray:
    return x.reshape((x.shape[0], *shape))


class Dense(Layer):
    def __init__(self, spec, input_shape, dtype=DTYPE):
        super().__init__(spec, input_shape, dtype)
        self.params = {
            "weight": np.zeros((self.input_shape[0], spec.units), dtype=dtype),
            "bias": np.zeros(spec.units, dtype=dtype),
        }

    def forward(self, x, training=False, rng=None, raw=False):
        """``raw=True`` skips the activation (used to obtain logits for the loss)."""
        if x.ndim != 2 or x.shape[1] != self.input_shape[0]:
            raise ShapeError(f"dense expects (N, {self.input_shape[0]}) input, got {x.shape}")
        z = matmul(x, self.params["weight"]) + self.params["bias"]
        act = "none" if raw else self.spec.activation
        if act == "relu":
            mask = z > 0
            out = z * mask
        elif act == "softmax":
            mask = None
            out = softmax(z)
        else:
            mask = None
            out = z
        self._cache = (x, act, mask, out)
        return out

    def backward(self, grad_out):
        x, act, mask, out = self._cached()
        if act == "relu":
            g = grad_out * mask
        elif act == "softmax":
            g = out * (grad_out - (grad_out * out).sum(axis=1, keepdims=True))
        else:
            g = grad_out
        self.grads = {
            "weight": matmul(x.T, g),
            "bias": g.sum(axis=0, dtype=np.float64).astype(self.dtype),
        }
        return matmul(g, self.params["weight"].T)


_LAYER_TYPES = {
    "conv2d": Conv2D,
    "maxpool2d": MaxPool2D,
    "dropout": Dropout,
    "batchnorm": BatchNorm,
    "flatten": Flatten,
    "dense": Dense,
}


def build_layer(spec: LayerSpec, input_shape: Shape, dtype=DTYPE) -> Layer:
    return _LAYER_TYPES[spec.kind](spec, input_shape, dtype)
