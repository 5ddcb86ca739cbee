"""Dense float tensors and a counter-based random number generator.

Tensors are plain numpy arrays of ``float32`` in row-major order; image
batches use the NHWC layout ``(batch, height, width, channels)``. The helpers
here validate shapes and keep the 64-bit accumulation rule for reductions.
"""

from __future__ import annotations

import zlib
from typing import Callable, Sequence, Union

import numpy as np

from .errors import InvalidRangeError, InvalidShapeError, ShapeError

Tensor = np.ndarray
DTYPE = np.float32

Scalar = Union[int, float]


def _check_shape(shape: Sequence[int]) -> tuple[int, ...]:
    shape = tuple(int(d) for d in shape)
    if not shape or any(d < 1 for d in shape):
        raise InvalidShapeError(f"invalid shape {list(shape)}: all dimensions must be >= 1")
    return shape


def tensor_new(shape: Sequence[int], fill: Scalar = 0.0, dtype=DTYPE) -> Tensor:
    return np.full(_check_shape(shape), fill, dtype=dtype)


def reshape(t: Tensor, shape: Sequence[int]) -> Tensor:
    shape = _check_shape(shape)
    if int(np.prod(shape)) != t.size:
        raise ShapeError(f"cannot reshape {t.shape} ({t.size} elements) to {shape}")
    return t.reshape(shape)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Rank-2 product accumulated in float64 and rounded to the operands' dtype."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    out_dtype = np.result_type(a.dtype, b.dtype)
    out = np.matmul(a.astype(np.float64, copy=False), b.astype(np.float64, copy=False))
    return out.astype(out_dtype, copy=False)


_BINARY = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
}


def elementwise(op: str, a: Tensor, b: Union[Tensor, Scalar, Callable, None] = None) -> Tensor:
    """Apply ``add``/``sub``/``mul`` (tensor or scalar operand), ``scale`` or ``map``.

    ``map`` takes a callable as ``b`` and applies it to every element.
    """
    if op == "scale":
        return (a * np.asarray(b, dtype=a.dtype)).astype(a.dtype, copy=False)
    if op == "map":
        return np.asarray(b(a), dtype=a.dtype)
    try:
        fn = _BINARY[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    if isinstance(b, np.ndarray) and b.ndim > 0:
        if b.shape != a.shape:
            raise ShapeError(f"{op}: shapes differ {a.shape} vs {b.shape}")
        return fn(a, b).astype(np.result_type(a.dtype, b.dtype), copy=False)
    return fn(a, np.asarray(b, dtype=a.dtype)).astype(a.dtype, copy=False)


def _purpose_key(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


class Rng:
    """Seeded Philox stream; ``stream`` derives independent keyed sub-streams.

    Philox is counter-based, so sub-streams keyed by ``(seed, purpose, *keys)``
    do not depend on how many draws any other stream has made.
    """

    def __init__(self, seed: int, *key: int):
        if not 0 <= int(seed) < 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        entropy = [self.seed & 0xFFFFFFFF, self.seed >> 32, *self.key]
        self.generator = np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))

    def stream(self, purpose: str, *keys: int) -> "Rng":
        return Rng(self.seed, *self.key, _purpose_key(purpose), *keys)

    def uniform(self, shape: Sequence[int], lo: float = 0.0, hi: float = 1.0) -> Tensor:
        return rng_uniform(self, shape, lo, hi)

    def random(self, size=None) -> np.ndarray:
        return self.generator.random(size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)


def rng_uniform(rng: Rng, shape: Sequence[int], lo: float, hi: float, dtype=DTYPE) -> Tensor:
    if not lo < hi:
        raise InvalidRangeError(f"invalid range [{lo}, {hi})")
    shape = _check_shape(shape)
    out = (lo + (hi - lo) * rng.generator.random(shape)).astype(dtype)
    # float32 rounding can land exactly on hi
    if dtype != np.float64:
        np.minimum(out, np.nextafter(dtype(hi), dtype(lo)), out=out)
    return out
