"""Dataset ingestion: IDX files, synthetic blob generators, and OOD variants.

Images are standardized to zero mean / unit variance with statistics taken
from the training split only; those statistics travel with the Dataset so
test and OOD splits can reuse them. All synthetic generation draws from the
documented SplitMix64 streams in `rng`, never from library RNGs, so a seed
pins the dataset bit-for-bit.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataFormatError
from .rng import Stream, derive_key

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

OOD_KINDS = ("uniform_noise", "shuffled_pixels")


@dataclass
class Dataset:
    images: np.ndarray  # (n, channels, h, w) float64, standardized
    labels: np.ndarray  # (n,) int64; -1 marks OOD examples
    num_classes: int
    split: str  # "train" | "test" | "ood"
    pixel_mean: float  # training-split statistics used for standardization
    pixel_std: float

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or len(self.images) != len(self.labels):
            raise ConfigurationError(
                f"expected (n, c, h, w) images with matching labels, got "
                f"{self.images.shape} / {self.labels.shape}")
        if len(self.images) < 1:
            raise ConfigurationError("dataset must contain at least one example")
        if self.split != "ood" and (
                self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ConfigurationError(
                f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.images)

    @property
    def norm_stats(self) -> tuple[float, float]:
        return self.pixel_mean, self.pixel_std


def _standardize(raw: np.ndarray, norm_stats: tuple[float, float] | None):
    if norm_stats is None:
        norm_stats = (float(raw.mean()), float(raw.std()))
    mean, std = norm_stats
    if std == 0.0:
        std = 1.0
    return (raw - mean) / std, (mean, std)


# ---------------------------------------------------------------------------
# IDX file format (big-endian headers, unsigned byte payload)


def load_idx(
    images_path,
    labels_path,
    num_classes: int | None = None,
    split: str = "train",
    norm_stats: tuple[float, float] | None = None,
) -> Dataset:
    """Load an MNIST-style IDX image/label pair.

    Pixels are scaled to [0, 1] and then standardized; pass `norm_stats`
    from the training split when loading a test set.
    """
    images = _read_idx_images(images_path)
    labels = _read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise DataFormatError(
            f"count mismatch: {len(images)} images vs {len(labels)} labels")
    raw = images.astype(np.float64)[:, None, :, :] / 255.0
    standardized, stats = _standardize(raw, norm_stats)
    if num_classes is None:
        num_classes = int(labels.max()) + 1
    return Dataset(standardized, labels.astype(np.int64), num_classes, split, *stats)


def _read_idx_images(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.read(16)
        if len(header) < 4:
            raise DataFormatError(f"truncated IDX image file {path}")
        magic = struct.unpack(">I", header[:4])[0]
        if magic != IDX_IMAGE_MAGIC:
            raise DataFormatError(
                f"bad IDX image magic 0x{magic:08x} in {path} (expected 0x{IDX_IMAGE_MAGIC:08x})")
        if len(header) < 16:
            raise DataFormatError(f"truncated IDX image file {path}")
        n, rows, cols = struct.unpack(">III", header[4:])
        data = f.read(n * rows * cols)
        if len(data) != n * rows * cols:
            raise DataFormatError(f"truncated IDX image file {path}")
        return np.frombuffer(data, dtype=np.uint8).reshape(n, rows, cols)


def _read_idx_labels(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.read(8)
        if len(header) < 4:
            raise DataFormatError(f"truncated IDX label file {path}")
        magic = struct.unpack(">I", header[:4])[0]
        if magic != IDX_LABEL_MAGIC:
            raise DataFormatError(
                f"bad IDX label magic 0x{magic:08x} in {path} (expected 0x{IDX_LABEL_MAGIC:08x})")
        if len(header) < 8:
            raise DataFormatError(f"truncated IDX label file {path}")
        (n,) = struct.unpack(">I", header[4:])
        data = f.read(n)
        if len(data) != n:
            raise DataFormatError(f"truncated IDX label file {path}")
        return np.frombuffer(data, dtype=np.uint8)


def save_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Write uint8 images (n, h, w) or (n, 1, h, w) and labels as IDX files."""
    images = np.asarray(images)
    if images.ndim == 4 and images.shape[1] == 1:
        images = images[:, 0]
    if images.ndim != 3:
        raise ConfigurationError(f"expected (n, h, w) images, got {images.shape}")
    if images.dtype != np.uint8:
        raise ConfigurationError("IDX stores unsigned bytes; quantize first")
    labels = np.asarray(labels)
    n, rows, cols = images.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, n, rows, cols))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABEL_MAGIC, n))
        f.write(labels.astype(np.uint8).tobytes())


def quantize_images(images: np.ndarray) -> np.ndarray:
    """Affine-map float images to 0..255 bytes for IDX export (lossy)."""
    lo, hi = float(images.min()), float(images.max())
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    return np.round((images - lo) * scale).astype(np.uint8)


# ---------------------------------------------------------------------------
# synthetic blobs: one spatial template per class plus gaussian pixel noise


def _class_templates(num_classes: int, image_size: int, seed: int) -> np.ndarray:
    """Well-separated per-class templates: a gaussian bump on a ring whose
    global rotation comes from the seed, plus a faint seed-keyed texture."""
    phase = Stream(derive_key(seed, "phase")).uniform(1)[0]
    yy, xx = np.mgrid[0:image_size, 0:image_size].astype(np.float64)
    center = (image_size - 1) / 2.0
    ring_radius = image_size / 3.2
    bump_sigma = image_size / 6.0
    templates = np.empty((num_classes, image_size, image_size))
    for c in range(num_classes):
        angle = 2.0 * np.pi * (c + phase) / num_classes
        cx = center + ring_radius * np.cos(angle)
        cy = center + ring_radius * np.sin(angle)
        bump = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2.0 * bump_sigma**2))
        texture = Stream(derive_key(seed, "texture", c)).normal(image_size * image_size)
        templates[c] = bump + 0.15 * texture.reshape(image_size, image_size)
    return templates


def synthetic_blobs(
    num_classes: int,
    image_size: int,
    per_class: int,
    noise_std: float,
    seed: int,
    split: str = "train",
    norm_stats: tuple[float, float] | None = None,
) -> Dataset:
    """Deterministic labeled blobs: class template + gaussian noise.

    Templates depend on (seed, class) only, so train/test splits generated
    with the same seed share them while drawing independent noise.
    """
    if min(num_classes, image_size, per_class) < 1:
        raise ConfigurationError("num_classes, image_size and per_class must be >= 1")
    templates = _class_templates(num_classes, image_size, seed)
    images = np.empty((num_classes * per_class, 1, image_size, image_size))
    labels = np.empty(num_classes * per_class, dtype=np.int64)
    for c in range(num_classes):
        noise = Stream(derive_key(seed, "noise", split, c)).normal(
            per_class * image_size * image_size)
        block = slice(c * per_class, (c + 1) * per_class)
        images[block, 0] = templates[c] + noise_std * noise.reshape(
            per_class, image_size, image_size)
        labels[block] = c
    standardized, stats = _standardize(images, norm_stats)
    return Dataset(standardized, labels, num_classes, split, *stats)


def synthetic_train_test(
    num_classes: int,
    image_size: int,
    per_class_train: int,
    per_class_test: int,
    noise_std: float,
    seed: int,
) -> tuple[Dataset, Dataset]:
    """Train/test pair sharing templates; test reuses the train statistics."""
    train = synthetic_blobs(num_classes, image_size, per_class_train, noise_std, seed)
    test = synthetic_blobs(num_classes, image_size, per_class_test, noise_std, seed,
                           split="test", norm_stats=train.norm_stats)
    return train, test


def synthetic_ood(base: Dataset, kind: str, seed: int) -> Dataset:
    """Out-of-distribution companion with the base dataset's shape.

    uniform_noise: pixels i.i.d. uniform over the base's standardized range.
    shuffled_pixels: each base image with its pixels randomly permuted.
    Labels are set to -1 (OOD flag); they carry no class semantics.
    """
    if kind not in OOD_KINDS:
        raise ConfigurationError(f"unknown OOD kind {kind!r}; choose from {OOD_KINDS}")
    n = len(base)
    flat = base.images.reshape(n, -1)
    if kind == "uniform_noise":
        lo, hi = float(base.images.min()), float(base.images.max())
        stream = Stream(derive_key(seed, "ood-uniform"))
        images = stream.uniform(flat.size, lo, hi).reshape(base.images.shape)
    else:
        stream = Stream(derive_key(seed, "ood-shuffle"))
        keys = stream.uint64(flat.size).reshape(n, -1)
        perm = np.argsort(keys, axis=1, kind="stable")
        images = np.take_along_axis(flat, perm, axis=1).reshape(base.images.shape)
    labels = np.full(n, -1, dtype=np.int64)
    return Dataset(images, labels, base.num_classes, "ood",
                   base.pixel_mean, base.pixel_std)
