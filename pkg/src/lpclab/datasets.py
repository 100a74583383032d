"""Synthetic classification data, the IDX image format, and deterministic batching."""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator

import numpy as np

from .nn import seed_rng

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxParseError(ValueError):
    def __init__(self, path, offset: int, message: str):
        super().__init__(f"{path}: byte {offset}: {message}")
        self.path = path
        self.offset = offset


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    K: int
    name: str = "dataset"

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        if X.ndim != 2 or X.shape[0] != y.size or y.size == 0:
            raise ValueError(f"{self.name}: X {X.shape} and {y.size} labels do not form a dataset")
        if y.min() < 0 or y.max() >= self.K:
            raise ValueError(f"{self.name}: labels outside [0, {self.K})")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.y.size

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.K, self.name)


@dataclass(frozen=True)
class BlobSpec:
    K: int = 3
    n_per_class: int = 300
    d: int = 2
    center_radius: float = 3.0
    sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.d < 2:
            raise ValueError("blobs need d >= 2")
        if self.K < 1 or self.n_per_class < 1 or self.sigma < 0:
            raise ValueError("invalid BlobSpec")


def blob_centers(K: int, d: int, radius: float) -> np.ndarray:
    angles = 2 * np.pi * np.arange(K) / K
    centers = np.zeros((K, d))
    centers[:, 0] = radius * np.cos(angles)
    centers[:, 1] = radius * np.sin(angles)
    return centers


def gaussian_blobs(spec: BlobSpec) -> Dataset:
    rng = seed_rng(spec.seed)
    centers = blob_centers(spec.K, spec.d, spec.center_radius)
    y = np.repeat(np.arange(spec.K), spec.n_per_class)
    X = centers[y] + spec.sigma * rng.standard_normal((y.size, spec.d))
    return Dataset(X, y, spec.K, f"blobs-K{spec.K}")


def concentric_rings(K: int, n_per_class: int, sigma: float = 0.05, seed: int = 0) -> Dataset:
    """Class ``p`` on the circle of radius ``p + 1`` with radial noise ``sigma``."""
    if K < 2:
        raise ValueError("rings need K >= 2")
    rng = seed_rng(seed)
    y = np.repeat(np.arange(K), n_per_class)
    theta = rng.uniform(0.0, 2 * np.pi, size=y.size)
    r = y + 1.0 + sigma * rng.standard_normal(y.size)
    X = np.column_stack([r * np.cos(theta), r * np.sin(theta)])
    return Dataset(X, y, K, f"rings-K{K}")


# ---------------------------------------------------------------- IDX


def _read_header(raw: bytes, path, magic: int, n_dims: int) -> tuple[int, ...]:
    if len(raw) < 4:
        raise IdxParseError(path, 0, "file shorter than the 4-byte magic number")
    (got,) = struct.unpack_from(">I", raw, 0)
    if got != magic:
        raise IdxParseError(path, 0, f"bad magic 0x{got:08x}, expected 0x{magic:08x}")
    need = 4 + 4 * n_dims
    if len(raw) < need:
        raise IdxParseError(path, len(raw), f"header truncated; need {need} bytes")
    return struct.unpack_from(">" + "I" * n_dims, raw, 4)


def read_idx_images(path) -> np.ndarray:
    """uint8 array of shape (N, rows, cols)."""
    raw = Path(path).read_bytes()
    n, rows, cols = _read_header(raw, path, IMAGES_MAGIC, 3)
    start = 16
    expected = n * rows * cols
    if len(raw) - start < expected:
        raise IdxParseError(path, len(raw), f"payload truncated: {len(raw) - start} of {expected} pixel bytes")
    if len(raw) - start > expected:
        raise IdxParseError(path, start + expected, "trailing bytes after pixel payload")
    return np.frombuffer(raw, dtype=np.uint8, count=expected, offset=start).reshape(n, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    (n,) = _read_header(raw, path, LABELS_MAGIC, 1)
    start = 8
    if len(raw) - start < n:
        raise IdxParseError(path, len(raw), f"payload truncated: {len(raw) - start} of {n} label bytes")
    if len(raw) - start > n:
        raise IdxParseError(path, start + n, "trailing bytes after label payload")
    return np.frombuffer(raw, dtype=np.uint8, count=n, offset=start).copy()


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    Path(path).write_bytes(struct.pack(">IIII", IMAGES_MAGIC, n, rows, cols) + images.tobytes())


def write_idx_labels(path, labels) -> None:
    labels = np.asarray(labels, dtype=np.uint8).reshape(-1)
    Path(path).write_bytes(struct.pack(">II", LABELS_MAGIC, labels.size) + labels.tobytes())


def load_idx(images_path, labels_path, K: int | None = None) -> Dataset:
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.size:
        raise IdxParseError(
            labels_path, 4, f"label count {labels.size} does not match image count {images.shape[0]} in {images_path}"
        )
    X = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    K = int(labels.max()) + 1 if K is None else K
    return Dataset(X, labels.astype(np.int64), K, Path(images_path).stem)


# ---------------------------------------------------------------- preprocessing and batching


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, data: Dataset) -> "Standardizer":
        mean = data.X.mean(axis=0)
        std = data.X.std(axis=0)
        return cls(mean, np.where(std > 0, std, 1.0))

    def apply(self, data: Dataset) -> Dataset:
        return replace(data, X=(data.X - self.mean) / self.scale)


def batches(data: Dataset | int, batch_size: int, seed: int, epoch: int) -> Iterator[np.ndarray]:
    """Index arrays covering every sample once; the shuffle depends only on (seed, epoch)."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n = data if isinstance(data, int) else len(data)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(epoch)])))
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]
