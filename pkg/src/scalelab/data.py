"""Dataset ingestion, batching, resizing and the synthetic two-class corpus.

On-disk layout: ``root/<id>.ppm`` (binary P6, 8-bit RGB) or ``root/<id>.rawt``
next to a labels CSV whose header is exactly ``id,label``.
"""

from __future__ import annotations

import csv
import logging
import math
import queue
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DecodeError, InvalidDataError, InvalidLabelError, ParseError
from .tensor import DTYPE, Rng

log = logging.getLogger(__name__)

LABELS_FILE = "labels.csv"
IMAGE_SUFFIXES = (".ppm", ".rawt")
RAWT_MAGIC = b"RAWT"
MIN_SYNTH_RES = 16
READ_AHEAD = 4

Image = Union[Path, np.ndarray]


# --- codecs ------------------------------------------------------------------

def write_ppm(path, pixels: np.ndarray) -> None:
    """Write an (H, W, 3) uint8 array as binary P6."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[2] != 3 or pixels.dtype != np.uint8:
        raise ValueError(f"expected (H, W, 3) uint8 pixels, got {pixels.shape} {pixels.dtype}")
    h, w, _ = pixels.shape
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(np.ascontiguousarray(pixels).tobytes())


def _ppm_tokens(data: bytes, count: int) -> Tuple[List[bytes], int]:
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated header")
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def read_ppm(path) -> np.ndarray:
    """Decode a binary P6 file into an (H, W, 3) uint8 array."""
    data = Path(path).read_bytes()
    try:
        (magic, w, h, maxval), offset = _ppm_tokens(data, 4)
        if magic != b"P6":
            raise ValueError(f"unsupported magic {magic!r}")
        w, h, maxval = int(w), int(h), int(maxval)
        if maxval != 255:
            raise ValueError(f"only 8-bit PPM is supported (maxval {maxval})")
        raster = data[offset:offset + w * h * 3]
        if len(raster) != w * h * 3:
            raise ValueError("truncated raster")
    except ValueError as exc:
        raise DecodeError(f"{path}: cannot decode PPM: {exc}") from None
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w, 3)


def write_rawt(path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype="<f4")
    if image.ndim != 3:
        raise ValueError(f"expected an (H, W, C) image, got {image.shape}")
    with open(path, "wb") as f:
        f.write(RAWT_MAGIC + struct.pack("<III", *image.shape))
        f.write(image.tobytes())


def read_rawt(path) -> np.ndarray:
    """Decode a raw tensor file; values are taken as already normalized to [0, 1]."""
    data = Path(path).read_bytes()
    if data[:4] != RAWT_MAGIC or len(data) < 16:
        raise DecodeError(f"{path}: not a RAWT file")
    h, w, c = struct.unpack("<III", data[4:16])
    body = data[16:]
    if len(body) != 4 * h * w * c:
        raise DecodeError(f"{path}: expected {h * w * c} floats, found {len(body) // 4}")
    return np.frombuffer(body, dtype="<f4").reshape(h, w, c).astype(DTYPE)


def decode_image(path) -> np.ndarray:
    """Load one image as float32 (H, W, C) in [0, 1]."""
    path = Path(path)
    if path.suffix == ".ppm":
        return read_ppm(path).astype(DTYPE) / DTYPE(255.0)
    if path.suffix == ".rawt":
        img = read_rawt(path)
        if img.size and (img.min() < 0 or img.max() > 1 or not np.all(np.isfinite(img))):
            raise DecodeError(f"{path}: raw tensor values must lie in [0, 1]")
        return img
    raise DecodeError(f"{path}: unsupported image format")


# --- index -------------------------------------------------------------------

@dataclass
class DatasetIndex:
    """Ordered (image, label) records; an image is a file path or an in-memory array."""

    images: List[Image]
    labels: np.ndarray
    ids: List[str] = field(default_factory=list)
    split: str = "train"

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise InvalidDataError("images and labels differ in length")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise InvalidLabelError("every label must be 0 or 1")
        if not self.ids:
            self.ids = [str(i) for i in range(len(self.images))]

    def __len__(self):
        return len(self.labels)

    @classmethod
    def from_arrays(cls, images: np.ndarray, labels, split: str = "train") -> "DatasetIndex":
        images = np.asarray(images, dtype=DTYPE)
        return cls(list(images), labels, split=split)

    def subset(self, positions: Sequence[int], split: Optional[str] = None) -> "DatasetIndex":
        positions = list(positions)
        return DatasetIndex(
            [self.images[i] for i in positions],
            self.labels[positions] if positions else np.zeros(0, dtype=np.int64),
            [self.ids[i] for i in positions],
            split or self.split,
        )

    def class_counts(self) -> Tuple[int, int]:
        return int((self.labels == 0).sum()), int((self.labels == 1).sum())

    def write_labels(self, path) -> None:
        with open(path, "w", newline="") as f:
            out = csv.writer(f, lineterminator="\n")
            out.writerow(["id", "label"])
            out.writerows(zip(self.ids, self.labels.tolist()))


def _find_image(root: Path, image_id: str) -> Optional[Path]:
    for suffix in IMAGE_SUFFIXES:
        p = root / f"{image_id}{suffix}"
        if p.is_file():
            return p
    return None


def load_index(root, labels_csv=None, split: str = "train") -> DatasetIndex:
    """Read ``id,label`` rows and resolve each id to an image file under ``root``."""
    root = Path(root)
    labels_csv = Path(labels_csv) if labels_csv is not None else root / LABELS_FILE
    try:
        f = open(labels_csv, newline="")
    except OSError as exc:
        raise InvalidDataError(f"cannot open labels file {labels_csv}: {exc}") from None
    images, labels, ids = [], [], []
    with f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["id", "label"]:
            raise ParseError(f"{labels_csv}: header must be 'id,label', got {header}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ParseError(f"{labels_csv}: expected 2 columns, got {len(row)}", line=lineno)
            image_id, label_text = row[0].strip(), row[1].strip()
            try:
                label = int(label_text)
            except ValueError:
                raise ParseError(f"{labels_csv}: unparseable label {label_text!r}", line=lineno, field="label") from None
            if label not in (0, 1):
                raise InvalidLabelError(f"{labels_csv} line {lineno}: label {label} is not 0 or 1")
            path = _find_image(root, image_id)
            if path is None:
                raise InvalidDataError(f"{labels_csv} line {lineno}: no image file for id {image_id!r} under {root}")
            images.append(path)
            labels.append(label)
            ids.append(image_id)
    index = DatasetIndex(images, labels, ids, split)
    log.info("loaded %d records from %s (benign %d, malignant %d)", len(index), labels_csv, *index.class_counts())
    return index


def split(index: DatasetIndex, train_count: int, val_count: int, seed: int):
    """Seeded shuffle, then the first ``train_count`` records train and the next ``val_count`` validate."""
    if train_count < 0 or val_count < 0 or train_count + val_count > len(index):
        raise InvalidDataError(
            f"cannot split {len(index)} records into {train_count} train + {val_count} val"
        )
    order = Rng(seed).stream("split").permutation(len(index))
    train = index.subset(order[:train_count].tolist(), "train")
    val = index.subset(order[train_count:train_count + val_count].tolist(), "val")
    log.info("split: train %s, val %s (benign, malignant)", train.class_counts(), val.class_counts())
    return train, val


# --- batching ----------------------------------------------------------------

@dataclass
class Batch:
    images: np.ndarray
    labels: np.ndarray


def epoch_order(n: int, shuffle: bool, seed: int, epoch: int) -> np.ndarray:
    if not shuffle:
        return np.arange(n)
    return Rng(seed).stream("shuffle", epoch).permutation(n)


def load_image(image: Image, size: Optional[Tuple[int, int]] = None) -> np.ndarray:
    img = decode_image(image) if isinstance(image, (str, Path)) else np.asarray(image, dtype=DTYPE)
    if size is not None and img.shape[:2] != tuple(size):
        img = resize_bilinear(img, size)
    return img


def _prefetch(items: Iterator, depth: int) -> Iterator:
    """Run ``items`` on a worker thread, staying at most ``depth`` items ahead."""
    q: queue.Queue = queue.Queue(maxsize=depth)
    done = object()
    stop = threading.Event()

    def worker():
        try:
            for item in items:
                if stop.is_set():
                    return
                q.put(item)
        except BaseException as exc:  # re-raised on the consumer side
            q.put(exc)
            return
        q.put(done)

    t = threading.Thread(target=worker, daemon=True)
    t.start()
    try:
        while True:
            item = q.get()
            if item is done:
                return
            if isinstance(item, BaseException):
                raise item
            yield item
    finally:
        stop.set()
        while t.is_alive():
            try:
                q.get_nowait()
            except queue.Empty:
                t.join(0.01)


def batches(
    index: DatasetIndex,
    batch_size: int,
    shuffle: bool = True,
    seed: int = 0,
    epoch: int = 0,
    size: Optional[Tuple[int, int]] = None,
    read_ahead: int = 0,
) -> Iterator[Batch]:
    """Yield ``ceil(N / batch_size)`` batches; only the last may be short.

    The order depends only on ``(seed, epoch)``. ``read_ahead`` > 0 decodes up
    to that many batches (capped at 4) on a background thread.
    """
    if batch_size < 1:
        raise ValueError(f"batch size must be >= 1, got {batch_size}")
    order = epoch_order(len(index), shuffle, seed, epoch)

    def gen():
        for start in range(0, len(order), batch_size):
            pos = order[start:start + batch_size]
            imgs = np.stack([load_image(index.images[i], size) for i in pos])
            yield Batch(imgs, index.labels[pos])

    if read_ahead > 0:
        return _prefetch(gen(), min(read_ahead, READ_AHEAD))
    return gen()


def resize_bilinear(image: np.ndarray, target: Tuple[int, int]) -> np.ndarray:
    """Bilinear resize with half-pixel centres (``align_corners=False``), edges clamped."""
    th, tw = int(target[0]), int(target[1])
    if th < 1 or tw < 1:
        raise ValueError(f"target size must be positive, got {target}")
    h, w = image.shape[:2]
    if (th, tw) == (h, w):
        return image.copy()

    def axis(n_in, n_out):
        src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0, n_in - 1)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    y0, y1, fy = axis(h, th)
    x0, x1, fx = axis(w, tw)
    img = image.astype(np.float64)
    fx = fx[None, :, None]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bottom = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    out = top * (1 - fy[:, None, None]) + bottom * fy[:, None, None]
    return out.astype(image.dtype)


# --- synthetic corpus --------------------------------------------------------

def _blob_image(gen: np.random.Generator, res: int) -> np.ndarray:
    """Class 0: a sum of a few broad Gaussian bumps."""
    yy, xx = np.mgrid[0:res, 0:res].astype(np.float64)
    field_ = np.zeros((res, res))
    for _ in range(gen.integers(2, 6)):
        cy, cx = gen.uniform(0, res, size=2)
        sigma = gen.uniform(res / 8, res / 4)
        field_ += gen.uniform(0.5, 1.0) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
    return field_ / max(field_.max(), 1e-9)


def _stripe_image(gen: np.random.Generator, res: int) -> np.ndarray:
    """Class 1: oriented high-frequency stripes (wave vector within 60 degrees of horizontal)."""
    yy, xx = np.mgrid[0:res, 0:res].astype(np.float64)
    theta = gen.uniform(-math.pi / 3, math.pi / 3)
    period = gen.uniform(3.0, 6.0)
    phase = gen.uniform(0, 2 * math.pi)
    wave = np.cos(2 * math.pi * (xx * math.cos(theta) + yy * math.sin(theta)) / period + phase)
    return 0.5 + 0.5 * wave


def synth_image(gen: np.random.Generator, res: int, label: int) -> np.ndarray:
    """One synthetic (res, res, 3) uint8 image of the requested class."""
    pattern = _stripe_image(gen, res) if label else _blob_image(gen, res)
    tint = gen.uniform(0.4, 1.0, size=3)
    base = gen.uniform(0.0, 0.3)
    rgb = base + (1 - base) * pattern[..., None] * tint
    rgb += gen.normal(0.0, 0.05, size=rgb.shape)
    return np.clip(np.rint(rgb * 255), 0, 255).astype(np.uint8)


def synth_generate(n_per_class: int, resolution: int, seed: int, out_dir) -> DatasetIndex:
    """Write ``2 * n_per_class`` PPM images plus ``labels.csv`` under ``out_dir``."""
    if n_per_class < 1:
        raise ValueError(f"need at least one image per class, got {n_per_class}")
    if resolution < MIN_SYNTH_RES:
        raise ValueError(f"resolution must be >= {MIN_SYNTH_RES}, got {resolution}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    root = Rng(seed).stream("synth")
    ids, labels, paths = [], [], []
    for k in range(2 * n_per_class):
        label = k // n_per_class
        gen = root.stream("image", k).generator
        image_id = f"img{k:06d}"
        path = out / f"{image_id}.ppm"
        write_ppm(path, synth_image(gen, resolution, label))
        ids.append(image_id)
        labels.append(label)
        paths.append(path)
    index = DatasetIndex(paths, labels, ids)
    index.write_labels(out / LABELS_FILE)
    return index
