"""MNIST in its standard IDX layout."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    pass


@dataclass
class ImageSample:
    """A grayscale image with pixels in [0, 1] and its class index."""

    pixels: np.ndarray
    label: int

    def __post_init__(self):
        self.pixels = np.clip(np.asarray(self.pixels, dtype=float), 0.0, 1.0)


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path, expected_magic: Optional[int] = None) -> np.ndarray:
    """Read an unsigned-byte IDX file into an array of its header shape."""
    with _open(path) as fh:
        data = fh.read()
    if len(data) < 4:
        raise IdxFormatError(f"{path}: truncated header")
    (magic,) = struct.unpack(">I", data[:4])
    if expected_magic is not None and magic != expected_magic:
        raise IdxFormatError(f"{path}: magic {magic:#010x}, expected {expected_magic:#010x}")
    if magic >> 8 != 0x08:
        raise IdxFormatError(f"{path}: only unsigned-byte IDX data is supported")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(data) < header:
        raise IdxFormatError(f"{path}: truncated header")
    shape = struct.unpack(f">{ndim}I", data[4:header])
    count = int(np.prod(shape))
    if len(data) - header < count:
        raise IdxFormatError(f"{path}: truncated, expected {count} bytes of data, found {len(data) - header}")
    return np.frombuffer(data, np.uint8, count, header).reshape(shape)


def write_idx(path, array: np.ndarray) -> Path:
    """Write a uint8 array as IDX (gzip-compressed if the name ends in .gz)."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    path = Path(path)
    payload = struct.pack(">I", 0x0800 | array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    payload += array.tobytes()
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "wb") as fh:
        fh.write(payload)
    return path


def load_mnist(images_path, labels_path, limit: Optional[int] = None) -> list:
    """Read paired image and label files; pixel bytes are scaled by 1/255."""
    images = read_idx(images_path, IMAGE_MAGIC)
    labels = read_idx(labels_path, LABEL_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError("image and label counts differ")
    n = images.shape[0] if limit is None else min(limit, images.shape[0])
    return [ImageSample(images[i].astype(float) / 255.0, int(labels[i])) for i in range(n)]


def find_mnist(directory, split: str = "train"):
    """Locate the (images, labels) pair for ``split`` in a directory."""
    directory = Path(directory)
    prefix = "train" if split == "train" else "t10k"
    for ext in ("", ".gz"):
        img = directory / f"{prefix}-images-idx3-ubyte{ext}"
        lab = directory / f"{prefix}-labels-idx1-ubyte{ext}"
        if img.exists() and lab.exists():
            return img, lab
    raise FileNotFoundError(f"no {split} IDX files in {directory}")
