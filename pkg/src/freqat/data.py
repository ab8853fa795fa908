"""CIFAR-10 binary ingestion, seeded subsetting/splitting, flip augmentation,
and a synthetic dataset of class-specific 2D sinusoids."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng
from .io import write_atomic

RECORD_BYTES = 3073
TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
TEST_FILES = ("test_batch.bin",)

# (row frequency, column frequency) of each synthetic class, spread from
# coarse to fine so that low-pass filtering removes classes progressively
SYNTH_FREQS = ((1, 0), (0, 2), (3, 3), (4, 1), (2, 6), (7, 7), (9, 2), (3, 11), (12, 12), (14, 5))


@dataclass
class Dataset:
    images: np.ndarray  # [n, C, H, W] float64 in [0, 1]
    labels: np.ndarray  # [n] int64
    class_count: int = 10

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise ValueError("images and labels differ in length")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError(f"labels must lie in [0, {self.class_count})")
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise ValueError("pixel values must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.intp)
        return Dataset(self.images[idx], self.labels[idx], self.class_count)


def parse_cifar_records(raw: bytes, name: str = "<bytes>") -> Dataset:
    if len(raw) % RECORD_BYTES:
        raise ValueError(f"{name}: size {len(raw)} is not a multiple of {RECORD_BYTES} bytes")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, RECORD_BYTES)
    labels = rec[:, 0].astype(np.int64)
    if len(labels) and labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise ValueError(f"{name}: record {bad} has label byte {labels[bad]} > 9")
    images = rec[:, 1:].reshape(-1, 3, 32, 32) / 255.0
    return Dataset(images, labels, 10)


def load_cifar_file(path: str | os.PathLike) -> Dataset:
    path = Path(path)
    return parse_cifar_records(path.read_bytes(), str(path))


def _resolve_dir(directory: Path) -> Path:
    nested = directory / "cifar-10-batches-bin"
    return nested if nested.is_dir() else directory


def load_cifar10(directory: str | os.PathLike, split: str = "train") -> Dataset:
    """Load the binary-version CIFAR-10 batches (``train`` or ``test``) in
    file and record order."""
    files = {"train": TRAIN_FILES, "test": TEST_FILES}.get(split)
    if files is None:
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    root = _resolve_dir(Path(directory))
    missing = [f for f in files if not (root / f).is_file()]
    if missing:
        raise FileNotFoundError(f"{root}: missing CIFAR-10 files {missing}")
    parts = [load_cifar_file(root / f) for f in files]
    return Dataset(
        np.concatenate([p.images for p in parts]), np.concatenate([p.labels for p in parts]), 10
    )


def cifar_records(dataset: Dataset) -> bytes:
    """Encode a 3x32x32 dataset in the CIFAR-10 binary record format
    (pixels quantized with round-half-up)."""
    if dataset.images.shape[1:] != (3, 32, 32):
        raise ValueError("record format needs 3x32x32 images")
    px = np.floor(dataset.images * 255.0 + 0.5).astype(np.uint8).reshape(len(dataset), -1)
    rec = np.concatenate([dataset.labels.astype(np.uint8)[:, None], px], axis=1)
    return rec.tobytes()


def write_cifar_records(dataset: Dataset, path: str | os.PathLike) -> None:
    write_atomic(path, cifar_records(dataset))


def split(dataset: Dataset, ratio: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded shuffle, first floor(ratio*n) to train, the rest to validation."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    perm = rng.stream(seed, rng.DATA).permutation(len(dataset))
    cut = int(np.floor(ratio * len(dataset)))
    return dataset.subset(perm[:cut]), dataset.subset(perm[cut:])


def take_subset(dataset: Dataset, per_class: int, seed: int) -> Dataset:
    """Exactly ``per_class`` examples of every class, drawn without
    replacement; original relative order is kept."""
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    g = rng.stream(seed, rng.DATA)
    picked = []
    for c in range(dataset.class_count):
        idx = np.flatnonzero(dataset.labels == c)
        if len(idx) < per_class:
            raise ValueError(f"class {c} has {len(idx)} examples, {per_class} requested")
        picked.append(g.choice(idx, size=per_class, replace=False))
    return dataset.subset(np.sort(np.concatenate(picked)))


def hflip(images: np.ndarray, mask=None) -> np.ndarray:
    """Mirror columns of the images selected by ``mask`` (all when None)."""
    out = np.array(images, dtype=np.float64, copy=True)
    if mask is None:
        return out[..., ::-1].copy()
    out[mask] = out[mask][..., ::-1]
    return out


def synth_dataset(
    n_per_class: int,
    classes: int = 10,
    seed: int = 0,
    noise: float = 0.1,
    side: int = 32,
    holdout: bool = False,
) -> Dataset:
    """Class ``c`` is ``0.5 + 0.4*cos(2pi (fy*i + fx*j)/side + phase)`` on all
    three channels plus uniform noise of the given amplitude, clamped to
    [0, 1]. The phase is random per image; the frequency pair
    ``SYNTH_FREQS[c]`` is what identifies the class. ``holdout=True`` draws
    from a separate stream, giving a test set disjoint in randomness from the
    training set of the same seed."""
    if not 2 <= classes <= 10:
        raise ValueError("classes must be in 2..10")
    g = rng.stream(seed, rng.SYNTH_HOLDOUT if holdout else rng.DATA)
    i, j = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    images, labels = [], []
    for c in range(classes):
        fy, fx = SYNTH_FREQS[c]
        phase = g.uniform(0.0, 2 * np.pi, size=n_per_class)
        arg = 2 * np.pi * (fy * i + fx * j) / side
        plane = 0.5 + 0.4 * np.cos(arg[None] + phase[:, None, None])
        img = np.repeat(plane[:, None], 3, axis=1)
        if noise:
            img = img + g.uniform(-noise, noise, size=img.shape)
        images.append(np.clip(img, 0.0, 1.0))
        labels.append(np.full(n_per_class, c))
    return Dataset(np.concatenate(images), np.concatenate(labels), classes)
