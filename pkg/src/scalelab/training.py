"""Model construction, the training loop and the binary model file."""

from __future__ import annotations

import logging
import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Tuple

import numpy as np

from .architecture import ArchitectureSpec, arch_from_file, arch_to_file, infer_shapes
from .data import DatasetIndex, batches
from .errors import (
    BadMagicError,
    ChecksumError,
    DivergenceError,
    InvalidDataError,
    ModelFileError,
    ParseError,
    ShapeError,
    TruncatedFileError,
    VersionError,
)
from .layers import Dense, Layer, build_layer
from .optim import AdamHyper, AdamState, adam_step, cross_entropy_loss, init_states, softmax
from .tensor import DTYPE, Rng

log = logging.getLogger(__name__)

MAGIC = b"SCLB"
FORMAT_VERSION = 1


def _fans(layer: Layer) -> Tuple[int, int]:
    spec = layer.spec
    if spec.kind == "conv2d":
        k2 = spec.kernel * spec.kernel
        return k2 * layer.input_shape[-1], k2 * spec.filters
    return layer.input_shape[0], spec.units


class Model:
    def __init__(self, arch: ArchitectureSpec, layers: List[Layer], seed: int = 0):
        self.arch = arch
        self.layers = layers
        self.seed = seed
        self.dropout_rng = Rng(seed).stream("dropout", 0)

    @property
    def input_size(self) -> Tuple[int, int]:
        return self.arch.input_shape[:2]

    def parameters(self) -> List[np.ndarray]:
        return [p for layer in self.layers for p in layer.params.values()]

    def gradients(self) -> List[np.ndarray]:
        return [layer.grads[name] for layer in self.layers for name in layer.params]

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def reseed_dropout(self, epoch: int) -> None:
        self.dropout_rng = Rng(self.seed).stream("dropout", epoch)

    def astype(self, dtype) -> "Model":
        for layer in self.layers:
            layer.astype(dtype)
        return self

    def logits(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        if x.ndim != 4 or x.shape[1:] != self.arch.input_shape:
            raise ShapeError(f"model expects input (N, {', '.join(map(str, self.arch.input_shape))}), got {x.shape}")
        for layer in self.layers[:-1]:
            x = layer.forward(x, training, self.dropout_rng)
        return self.layers[-1].forward(x, training, self.dropout_rng, raw=True)

    def forward(self, x: np.ndarray, mode: str = "eval") -> np.ndarray:
        """Class probabilities (N, 2); ``mode`` is ``"train"`` or ``"eval"``."""
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        return softmax(self.logits(x, mode == "train"))

    def backward(self, grad_logits: np.ndarray) -> np.ndarray:
        g = grad_logits
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g


def build_model(arch: ArchitectureSpec, seed: int = 0, dtype=DTYPE) -> Model:
    """Glorot-uniform conv/dense weights, zero biases, unit/zero batchnorm scale/shift."""
    rows = infer_shapes(arch)
    shape = arch.input_shape
    layers = []
    init = Rng(seed).stream("init")
    for i, (spec, row) in enumerate(zip(arch.layers, rows)):
        layer = build_layer(spec, shape, dtype)
        if spec.kind in ("conv2d", "dense"):
            fan_in, fan_out = _fans(layer)
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            w = layer.params["weight"]
            w[...] = init.stream("layer", i).uniform(w.shape, -limit, limit)
        layers.append(layer)
        shape = row.output_shape
    if not isinstance(layers[-1], Dense):
        raise ValueError("the final layer must be dense")
    return Model(arch, layers, seed)


def train_step(model: Model, x: np.ndarray, labels, states: List[AdamState], hyper: AdamHyper) -> float:
    """One forward/backward pass and one Adam update per parameter tensor; returns the pre-update loss."""
    z = model.logits(x, training=True)
    if not np.all(np.isfinite(z)):
        return math.nan
    lv = cross_entropy_loss(z, labels)
    if not math.isfinite(lv.loss):
        return lv.loss
    model.backward(lv.grad_logits)
    for p, g, s in zip(model.parameters(), model.gradients(), states):
        adam_step(p, g, s, hyper)
    return lv.loss


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0
    adam: AdamHyper = field(default_factory=AdamHyper)
    shuffle: bool = True
    read_ahead: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float


@dataclass
class Evaluation:
    loss: float
    accuracy: float
    scores: np.ndarray  # malignant-class probability per sample
    labels: np.ndarray

    @property
    def predictions(self) -> np.ndarray:
        return (self.scores > 0.5).astype(np.int64)


def evaluate(model: Model, index: DatasetIndex, batch_size: int = 32, read_ahead: int = 0) -> Evaluation:
    """Eval-mode pass in index order: sample-weighted loss, accuracy and scores."""
    if len(index) == 0:
        raise InvalidDataError("cannot evaluate on an empty dataset")
    total_loss = 0.0
    probs = []
    for batch in batches(index, batch_size, shuffle=False, size=model.input_size, read_ahead=read_ahead):
        z = model.logits(batch.images, training=False)
        total_loss += cross_entropy_loss(z, batch.labels).loss * len(batch.labels)
        probs.append(softmax(z.astype(np.float64)))
    p = np.concatenate(probs)
    # ties (0.5/0.5) resolve to class 0
    pred = (p[:, 1] > p[:, 0]).astype(np.int64)
    acc = float((pred == index.labels).mean())
    return Evaluation(total_loss / len(index), acc, p[:, 1], index.labels.copy())


def train(
    model: Model,
    train_data: DatasetIndex,
    val_data: DatasetIndex,
    cfg: TrainConfig,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
) -> List[EpochRecord]:
    if len(train_data) == 0 or len(val_data) == 0:
        raise InvalidDataError("training and validation sets must be non-empty")
    states = init_states(model.parameters())
    history = []
    for epoch in range(cfg.epochs):
        model.reseed_dropout(epoch)
        stream = batches(
            train_data, cfg.batch_size, cfg.shuffle, cfg.seed, epoch,
            size=model.input_size, read_ahead=cfg.read_ahead,
        )
        for b, batch in enumerate(stream):
            # overflow is reported as divergence below, not as numpy warnings
            with np.errstate(over="ignore", invalid="ignore"):
                loss = train_step(model, batch.images, batch.labels, states, cfg.adam)
            if not math.isfinite(loss):
                raise DivergenceError(epoch + 1, b, loss)
        tr = evaluate(model, train_data, cfg.batch_size, cfg.read_ahead)
        va = evaluate(model, val_data, cfg.batch_size, cfg.read_ahead)
        record = EpochRecord(epoch + 1, tr.loss, tr.accuracy, va.loss, va.accuracy)
        log.info(
            "epoch %d: train loss %.4f acc %.4f | val loss %.4f acc %.4f",
            record.epoch, record.train_loss, record.train_accuracy, record.val_loss, record.val_accuracy,
        )
        history.append(record)
        if on_epoch is not None:
            on_epoch(record)
    return history


# --- model file --------------------------------------------------------------
#
# magic "SCLB" | u16 version | u32 arch length | arch text (UTF-8)
# | per-layer arrays as little-endian float32, layer order | u32 CRC32 of all preceding bytes

_HEADER = struct.Struct("<4sHI")


def model_to_bytes(model: Model) -> bytes:
    arch = arch_to_file(model.arch).encode("utf-8")
    parts = [_HEADER.pack(MAGIC, FORMAT_VERSION, len(arch)), arch]
    for layer in model.layers:
        for _, arr in layer.state_arrays():
            parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def model_from_bytes(data: bytes) -> Model:
    if len(data) < 4:
        raise TruncatedFileError(f"model file is truncated ({len(data)} bytes)")
    if data[:4] != MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    if len(data) < _HEADER.size:
        raise TruncatedFileError("model file is truncated inside its header")
    _, version, arch_len = _HEADER.unpack_from(data)
    if version != FORMAT_VERSION:
        raise VersionError(version, FORMAT_VERSION)
    pos = _HEADER.size
    if len(data) < pos + arch_len:
        raise TruncatedFileError("model file is truncated inside its architecture block")
    try:
        arch = arch_from_file(data[pos:pos + arch_len].decode("utf-8"))
    except (UnicodeDecodeError, ParseError) as exc:
        raise ModelFileError(f"corrupt architecture block: {exc}") from None
    pos += arch_len
    model = build_model(arch, 0)
    expected = pos + 4 * sum(a.size for layer in model.layers for _, a in layer.state_arrays()) + 4
    if len(data) < expected:
        raise TruncatedFileError(f"model file is truncated: {len(data)} of {expected} bytes")
    if len(data) > expected:
        raise ModelFileError(f"model file has {len(data) - expected} unexpected trailing bytes")
    (stored,) = struct.unpack_from("<I", data, expected - 4)
    if zlib.crc32(data[: expected - 4]) != stored:
        raise ChecksumError("model file checksum mismatch")
    for layer in model.layers:
        for _, arr in layer.state_arrays():
            n = arr.size
            arr[...] = np.frombuffer(data, dtype="<f4", count=n, offset=pos).reshape(arr.shape)
            pos += 4 * n
    return model


def save_model(model: Model, path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path) -> Model:
    return model_from_bytes(Path(path).read_bytes())
