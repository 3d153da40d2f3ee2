"""MNIST ingestion from IDX files, plus deterministic stratified subsampling."""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

DEFAULT_MNIST_DIR = "/root/data/mnist"
MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


class IdxError(ValueError):
    pass


class WrongMagicError(IdxError):
    pass


class CountMismatchError(IdxError):
    pass


class TruncatedIdxError(IdxError):
    pass


@dataclass
class Dataset:
    images: np.ndarray   # (n, 1, 28, 28) float32 in [0, 1]
    labels: np.ndarray   # (n,) int64 in [0, 9]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise CountMismatchError(
                f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self):
        return len(self.labels)

    def take(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(self.images[index], self.labels[index], dict(self.provenance))

    def head(self, n: int | None) -> "Dataset":
        if n is None or n >= len(self):
            return self
        return self.take(np.arange(n))


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _read_idx(path, expected_magic, kind):
    buf = Path(path).read_bytes()
    if len(buf) < 8:
        raise TruncatedIdxError(f"{path}: file too short for an IDX header")
    magic, count = struct.unpack(">II", buf[:8])
    if magic != expected_magic:
        raise WrongMagicError(
            f"{path}: wrong magic 0x{magic:08x} for {kind} file, expected 0x{expected_magic:08x}")
    if kind == "images":
        if len(buf) < 16:
            raise TruncatedIdxError(f"{path}: file too short for an image header")
        rows, cols = struct.unpack(">II", buf[8:16])
        shape, offset = (count, rows, cols), 16
    else:
        shape, offset = (count,), 8
    need = int(np.prod(shape))
    if len(buf) - offset < need:
        raise TruncatedIdxError(
            f"{path}: header announces {need} bytes of data, found {len(buf) - offset}")
    return np.frombuffer(buf, dtype=np.uint8, count=need, offset=offset).reshape(shape)


def read_idx_images(path) -> np.ndarray:
    """Raw ``uint8`` pixels, shape ``(n, rows, cols)``."""
    return _read_idx(path, IMAGES_MAGIC, "images")


def read_idx_labels(path) -> np.ndarray:
    return _read_idx(path, LABELS_MAGIC, "labels")


def write_idx_images(path, pixels) -> None:
    pixels = np.asarray(pixels, dtype=np.uint8)
    n, rows, cols = pixels.shape
    Path(path).write_bytes(struct.pack(">IIII", IMAGES_MAGIC, n, rows, cols) + pixels.tobytes())


def write_idx_labels(path, labels) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    Path(path).write_bytes(struct.pack(">II", LABELS_MAGIC, len(labels)) + labels.tobytes())


def load_idx(images_path, labels_path) -> Dataset:
    """Load an IDX image/label pair, scaling pixels by 1/255."""
    pixels = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(pixels) != len(labels):
        raise CountMismatchError(
            f"{images_path} holds {len(pixels)} images but {labels_path} holds {len(labels)} labels")
    if len(labels) and labels.max() > 9:
        raise IdxError(f"{labels_path}: label {int(labels.max())} outside 0..9")
    images = (pixels.astype(np.float32) / np.float32(255.0))[:, None, :, :]
    provenance = {
        "images": str(images_path),
        "labels": str(labels_path),
        "images_sha256": _sha256(images_path),
        "labels_sha256": _sha256(labels_path),
    }
    return Dataset(images, labels.astype(np.int64), provenance)


def mnist_dir() -> Path:
    return Path(os.environ.get("MNIST_DIR", DEFAULT_MNIST_DIR))


def load_mnist(split: str, directory=None) -> Dataset:
    directory = Path(directory) if directory is not None else mnist_dir()
    images, labels = MNIST_FILES[split]
    return load_idx(directory / images, directory / labels)


def subsample_indices(labels, n: int, seed: int) -> np.ndarray:
    """Indices of a stratified sample of ``n`` items without replacement.

    Each class receives its proportional share, rounded by largest remainder,
    so per-class counts are within one item of ``n * class_fraction``. The
    order is shuffled; the result is a pure function of ``(labels, n, seed)``.
    """
    labels = np.asarray(labels)
    size = len(labels)
    if not 1 <= n <= size:
        raise ValueError(f"subsample size must be in [1, {size}], got {n}")
    rng = np.random.default_rng(seed)
    classes, counts = np.unique(labels, return_counts=True)
    exact = counts * n / size
    quota = np.floor(exact).astype(int)
    short = n - quota.sum()
    # largest remainder; ties resolved by class order
    order = np.argsort(-(exact - quota), kind="stable")
    quota[order[:short]] += 1
    chosen = []
    for cls, q in zip(classes, quota):
        members = np.flatnonzero(labels == cls)
        chosen.append(rng.choice(members, size=q, replace=False))
    return rng.permutation(np.concatenate(chosen))


def subsample(ds: Dataset, n: int, seed: int) -> Dataset:
    """Stratified, shuffled sample of ``n`` items (see :func:`subsample_indices`)."""
    out = ds.take(subsample_indices(ds.labels, n, seed))
    out.provenance = dict(ds.provenance, subsample={"n": int(n), "seed": int(seed)})
    return out
