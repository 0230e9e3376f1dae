"""MNIST ingestion from IDX files, dynamic binarization and minibatching."""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from typing import Iterator

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
ROWS = COLS = 28
PIXELS = ROWS * COLS
VALIDATION_SIZE = 10_000

# seed-stream tags; each (seed, epoch, tag) triple owns an independent generator
STREAM_SHUFFLE = 1
STREAM_BINARIZE = 2
STREAM_NOISE = 3
STREAM_EVAL = 4


class IdxFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # (N, 784) float64 in [0, 1]
    labels: np.ndarray  # (N,) uint8

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.images)

    def take(self, indices) -> "Dataset":
        return Dataset(self.images[indices], self.labels[indices])


@dataclass(frozen=True)
class Batch:
    indices: np.ndarray
    x: np.ndarray  # binarized, (M, 784)


def _maybe_gunzip(data: bytes) -> bytes:
    if data[:2] == b"\x1f\x8b":
        return gzip.decompress(data)
    return data


def _header(data: bytes, magic: int, ndims: int) -> tuple[int, ...]:
    need = 4 * (1 + ndims)
    if len(data) < need:
        raise IdxFormatError(f"header needs {need} bytes, got {len(data)}", len(data))
    found = struct.unpack(">I", data[:4])[0]
    if found != magic:
        raise IdxFormatError(f"bad magic 0x{found:08x}, expected 0x{magic:08x}", 0)
    return struct.unpack(f">{ndims}I", data[4:need])


def load_idx_images(data: bytes) -> np.ndarray:
    """Parse an IDX image file (optionally gzipped) into ``(count, 784)`` floats."""
    data = _maybe_gunzip(data)
    count, rows, cols = _header(data, IMAGE_MAGIC, 3)
    if (rows, cols) != (ROWS, COLS):
        raise IdxFormatError(f"expected {ROWS}x{COLS} images, header says {rows}x{cols}", 8)
    payload = memoryview(data)[16:]
    if len(payload) < count * PIXELS:
        raise IdxFormatError(f"truncated payload: {count} images need {count * PIXELS} bytes, "
                             f"found {len(payload)}", 16 + len(payload))
    raw = np.frombuffer(payload, dtype=np.uint8, count=count * PIXELS)
    return raw.reshape(count, PIXELS) / 255.0


def load_idx_labels(data: bytes) -> np.ndarray:
    data = _maybe_gunzip(data)
    (count,) = _header(data, LABEL_MAGIC, 1)
    if len(data) - 8 < count:
        raise IdxFormatError(f"truncated payload: need {count} labels, found {len(data) - 8}",
                             len(data))
    labels = np.frombuffer(data, dtype=np.uint8, count=count, offset=8).copy()
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise IdxFormatError(f"label {labels[bad[0]]} out of range 0-9", 8 + int(bad[0]))
    return labels


def encode_idx_images(pixels: np.ndarray) -> bytes:
    """Inverse of :func:`load_idx_images` for ``uint8`` pixels ``(count, 28, 28)``."""
    pixels = np.asarray(pixels, dtype=np.uint8).reshape(-1, ROWS, COLS)
    return struct.pack(">4I", IMAGE_MAGIC, len(pixels), ROWS, COLS) + pixels.tobytes()


def encode_idx_labels(labels) -> bytes:
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">2I", LABEL_MAGIC, len(labels)) + labels.tobytes()


def _read(data_dir: str, stem: str) -> bytes:
    for name in (stem + ".gz", stem):
        path = os.path.join(data_dir, name)
        if os.path.exists(path):
            with open(path, "rb") as fh:
                return fh.read()
    raise FileNotFoundError(f"no {stem}[.gz] in {data_dir}")


def load_mnist(data_dir: str, split: str = "train") -> Dataset:
    prefix = {"train": "train", "test": "t10k"}[split]
    images = load_idx_images(_read(data_dir, f"{prefix}-images-idx3-ubyte"))
    labels = load_idx_labels(_read(data_dir, f"{prefix}-labels-idx1-ubyte"))
    return Dataset(images, labels)


def split_validation(ds: Dataset, size: int = VALIDATION_SIZE) -> tuple[Dataset, Dataset]:
    """Hold out the last ``size`` images."""
    cut = len(ds) - size
    return ds.take(slice(0, cut)), ds.take(slice(cut, None))


def dynamic_binarize(img: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Each pixel becomes 1 with probability equal to its intensity."""
    return (rng.random(np.shape(img)) < img).astype(np.float64)


def epoch_rng(seed: int, epoch: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch, stream])


def minibatches(ds: Dataset, batch: int, seed: int, epoch: int) -> Iterator[Batch]:
    """Shuffled, freshly binarized batches; the last one may be short."""
    if batch < 1:
        raise ValueError("batch size must be >= 1")
    order = epoch_rng(seed, epoch, STREAM_SHUFFLE).permutation(len(ds))
    bin_rng = epoch_rng(seed, epoch, STREAM_BINARIZE)
    for start in range(0, len(ds), batch):
        idx = order[start:start + batch]
        yield Batch(idx, dynamic_binarize(ds.images[idx], bin_rng))
