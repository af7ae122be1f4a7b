"""Dataset ingestion: IDX and CIFAR-10 binary formats, plus synthetic corpora.

Images are always surfaced as (N, C, H, W) float64 tensors in raw [0, 255]
pixel space, so an l-infinity budget of 10 spans under 8% of the data
range regardless of where the data came from.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError
from .tensorops import Rng

__all__ = ["Dataset", "load_idx", "save_idx", "load_cifar10", "synth_dataset"]

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
CIFAR_RECORD = 3073  # 1 label byte + 3*32*32 pixel bytes


@dataclass
class Dataset:
    """Immutable labeled image collection in raw pixel space."""

    images: np.ndarray
    labels: np.ndarray
    class_count: int
    name: str = ""

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ValueError(f"images must be (N,C,H,W), got {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise ValueError("one label per image required")
        if self.images.size and (self.images.min() < 0 or self.images.max() > 255):
            raise ValueError("pixel values must lie in [0, 255]")
        if self.labels.size and (self.labels.min() < 0
                                 or self.labels.max() >= self.class_count):
            raise ValueError(f"labels must lie in [0, {self.class_count})")

    def __len__(self) -> int:
        return self.images.shape[0]

    def subset(self, indices) -> "Dataset":
        return Dataset(self.images[indices].copy(), self.labels[indices].copy(),
                       self.class_count, self.name)


def _read_file(path, what: str) -> bytes:
    try:
        with open(path, "rb") as f:
            return f.read()
    except OSError as exc:
        raise FormatError(f"cannot read {what} {path}: {exc}") from exc


def _parse_idx(data: bytes, magic: int, dims: int, path) -> np.ndarray:
    header = 4 + 4 * dims
    if len(data) < header:
        raise FormatError(f"IDX file {path}: truncated header")
    got_magic = struct.unpack(">I", data[:4])[0]
    if got_magic != magic:
        raise FormatError(f"IDX file {path}: magic 0x{got_magic:08x}, "
                          f"expected 0x{magic:08x}")
    sizes = struct.unpack(f">{dims}I", data[4:header])
    count = int(np.prod(sizes))
    if len(data) != header + count:
        raise FormatError(f"IDX file {path}: payload is {len(data) - header} "
                          f"bytes, expected {count}")
    return np.frombuffer(data, dtype=np.uint8, offset=header).reshape(sizes)


def load_idx(images_path, labels_path, class_count: int = 10,
             name: str = "") -> Dataset:
    """Load an IDX image/label pair (the MNIST container format).

    Images use magic 0x00000803 with (N, H, W) unsigned bytes; labels use
    0x00000801 with N bytes.  Pixels are widened to float64 in [0, 255].
    """
    images = _parse_idx(_read_file(images_path, "IDX image file"),
                        IDX_IMAGE_MAGIC, 3, images_path)
    labels = _parse_idx(_read_file(labels_path, "IDX label file"),
                        IDX_LABEL_MAGIC, 1, labels_path)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(
            f"IDX pair mismatch: {images.shape[0]} images vs "
            f"{labels.shape[0]} labels")
    if labels.size and labels.max() >= class_count:
        raise FormatError(f"IDX label {labels.max()} out of range "
                          f"[0, {class_count})")
    n, h, w = images.shape
    return Dataset(images.astype(np.float64).reshape(n, 1, h, w),
                   labels.astype(np.int64), class_count,
                   name or str(images_path))


def save_idx(ds: Dataset, images_path, labels_path) -> None:
    """Write a single-channel dataset as an IDX pair (pixels rounded to bytes)."""
    n, c, h, w = ds.images.shape
    if c != 1:
        raise ValueError("IDX image files hold single-channel images")
    pixels = np.clip(np.rint(ds.images), 0, 255).astype(np.uint8).reshape(n, h, w)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, n, h, w))
        f.write(pixels.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABEL_MAGIC, n))
        f.write(ds.labels.astype(np.uint8).tobytes())


def load_cifar10(batch_paths, name: str = "cifar10") -> Dataset:
    """Load CIFAR-10 binary batches: records of 1 label byte + 3072 pixels
    (R plane, then G, then B, row-major 32x32)."""
    if isinstance(batch_paths, (str, bytes)) or not hasattr(batch_paths, "__iter__"):
        batch_paths = [batch_paths]
    images, labels = [], []
    for path in batch_paths:
        data = _read_file(path, "CIFAR-10 batch")
        if len(data) == 0 or len(data) % CIFAR_RECORD != 0:
            raise FormatError(f"CIFAR-10 batch {path}: length {len(data)} is "
                              f"not a positive multiple of {CIFAR_RECORD}")
        records = np.frombuffer(data, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        batch_labels = records[:, 0]
        if batch_labels.max() > 9:
            raise FormatError(f"CIFAR-10 batch {path}: label byte "
                              f"{batch_labels.max()} > 9")
        images.append(records[:, 1:].reshape(-1, 3, 32, 32))
        labels.append(batch_labels)
    return Dataset(np.concatenate(images).astype(np.float64),
                   np.concatenate(labels).astype(np.int64), 10, name)


def synth_dataset(rng: Rng, class_count: int, n: int, shape,
                  contrast: float = 4.0, noise_std: float = 8.0,
                  block_size: int | None = None, name: str = "synth") -> Dataset:
    """Gaussian blobs around per-class template images.

    Each class template is mid-gray plus a +-``contrast`` pattern of
    constant ``block_size`` x ``block_size`` tiles (default ~quarter of the
    image side), so the class signal has the local structure convolutional
    filters pick up quickly.  Samples add isotropic noise of ``noise_std``
    and are clipped to [0, 255].  Templates are redrawn until every pair is
    separated by at least 5x the blob std, so the classes are linearly
    separable by construction.  Labels cycle 0,1,...,class_count-1 so any
    prefix is near-balanced.
    """
    if class_count < 2:
        raise ValueError("need at least two classes")
    if n < class_count:
        raise ValueError(f"n={n} gives some class no sample "
                         f"(class_count={class_count})")
    c, h, w = (int(s) for s in shape)
    if block_size is None:
        block_size = max(1, min(h, w) // 4)
    gh = -(-h // block_size)
    gw = -(-w // block_size)
    min_sep = 5.0 * noise_std
    templates = None
    for _ in range(1000):
        coarse = rng.uniform(-contrast, contrast, (class_count, c, gh, gw))
        cand = 128.0 + np.repeat(np.repeat(coarse, block_size, axis=2),
                                 block_size, axis=3)[:, :, :h, :w]
        flat = cand.reshape(class_count, -1)
        d2 = np.sum((flat[:, None, :] - flat[None, :, :]) ** 2, axis=-1)
        d2[np.diag_indices(class_count)] = np.inf
        if np.sqrt(d2.min()) >= min_sep:
            templates = cand
            break
    if templates is None:
        raise ValueError(
            f"could not draw {class_count} templates separated by {min_sep} "
            f"in shape {(c, h, w)}; raise contrast or lower noise_std")
    labels = np.arange(n, dtype=np.int64) % class_count
    images = templates[labels] + rng.normal(0.0, noise_std, (n, c, h, w))
    np.clip(images, 0.0, 255.0, out=images)
    return Dataset(images, labels, class_count, name)
