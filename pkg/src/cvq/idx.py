"""Reader/writer for the big-endian IDX files MNIST ships in."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class IdxError(ValueError):
    pass


class BadMagicError(IdxError):
    pass


class TruncatedFileError(IdxError):
    pass


class BadDimensionsError(IdxError):
    pass


@dataclass
class MnistSet:
    images: np.ndarray  # (N, 784) in [0, 1]

    @property
    def count(self) -> int:
        return self.images.shape[0]

    def subset(self, n: int) -> "MnistSet":
        return MnistSet(self.images[:n])


def _read(path) -> bytes:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _check_magic(path, raw: bytes, expected: int) -> None:
    if len(raw) < 4:
        raise TruncatedFileError(f"{path}: truncated header ({len(raw)} bytes)")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected:
        raise BadMagicError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected:08x}")


def load_idx_images(path) -> MnistSet:
    raw = _read(path)
    _check_magic(path, raw, IMAGE_MAGIC)
    if len(raw) < 16:
        raise TruncatedFileError(f"{path}: truncated header ({len(raw)} bytes)")
    _, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if (rows, cols) != (28, 28):
        raise BadDimensionsError(f"{path}: images are {rows}x{cols}, expected 28x28")
    need = 16 + count * rows * cols
    if len(raw) < need:
        raise TruncatedFileError(f"{path}: expected {need} bytes, found {len(raw)}")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=count * rows * cols, offset=16)
    return MnistSet(pixels.reshape(count, rows * cols).astype(np.float64) / 255.0)


def load_idx_labels(path) -> np.ndarray:
    raw = _read(path)
    _check_magic(path, raw, LABEL_MAGIC)
    if len(raw) < 8:
        raise TruncatedFileError(f"{path}: truncated header ({len(raw)} bytes)")
    _, count = struct.unpack(">II", raw[:8])
    if len(raw) < 8 + count:
        raise TruncatedFileError(f"{path}: expected {8 + count} bytes, found {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=8).copy()


def write_idx_images(path, pixels) -> None:
    pixels = np.asarray(pixels, dtype=np.uint8).reshape(-1, 28, 28)
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGE_MAGIC, pixels.shape[0], 28, 28))
        f.write(pixels.tobytes())


def write_idx_labels(path, labels) -> None:
    labels = np.asarray(labels, dtype=np.uint8).ravel()
    with open(path, "wb") as f:
        f.write(struct.pack(">II", LABEL_MAGIC, labels.size))
        f.write(labels.tobytes())


def export_mlxtend_mnist(out_dir) -> tuple[Path, Path]:
    """Write the 5000-image MNIST sample bundled with ``mlxtend`` as IDX files.

    Returns the (images, labels) paths. Existing files are reused.
    """
    out_dir = Path(out_dir)
    images = out_dir / "mnist5k-images-idx3-ubyte"
    labels = out_dir / "mnist5k-labels-idx1-ubyte"
    if images.exists() and labels.exists():
        return images, labels
    from importlib.resources import files

    src = files("mlxtend.data") / "data" / "mnist_5k.csv.gz"
    with src.open("rb") as fh:
        table = np.loadtxt(gzip.open(fh, "rt"), delimiter=",", dtype=np.int64)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_idx_images(images, table[:, :-1])
    write_idx_labels(labels, table[:, -1])
    return images, labels
