"""Datasets, preprocessing, augmentation, category splits and batching.

Images are held at rest as uint8 arrays shaped (n, 3, h, w).  Training code
standardizes them per image, then augments per sample with a seed derived
from (epoch seed, dataset index), so every stream is a pure function of its
inputs.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, FormatError

SYNTH_VERSION = "synth-gratings-v1"

CIFAR_RECORD = 3073
CIFAR_PIXELS = 3072
CIFAR_RECORDS_PER_FILE = 10000
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILE = "test_batch.bin"


@dataclass
class Dataset:
    images: np.ndarray
    labels: np.ndarray | None
    class_count: int
    name: str = ""

    def __post_init__(self):
        if self.images.ndim != 4:
            raise DataError(f"images must be (n, c, h, w), got {self.images.shape}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (len(self.images),):
                raise DataError(f"{len(self.images)} images but labels shaped {self.labels.shape}")
            if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
                raise DataError(f"labels outside [0, {self.class_count})")

    def __len__(self):
        return len(self.images)

    def subset(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        labels = None if self.labels is None else self.labels[indices]
        return Dataset(self.images[indices], labels, self.class_count, self.name)

    def without_labels(self):
        return Dataset(self.images, None, self.class_count, self.name)


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

# per-class (orientation in degrees, cycles across the image); lr-flip invariant
_ORIENTATIONS = (0.0, 90.0)
_FREQUENCIES = (2.0, 4.5, 7.0, 9.5, 12.0)
_PALETTE = np.array([
    [0.9, 0.2, 0.2], [0.2, 0.8, 0.3], [0.2, 0.3, 0.9], [0.9, 0.8, 0.2], [0.7, 0.2, 0.8],
    [0.2, 0.8, 0.8], [0.9, 0.5, 0.1], [0.5, 0.5, 0.5], [0.4, 0.9, 0.6], [0.6, 0.4, 0.2],
])


def synth_dataset(class_count=4, per_class=100, image_size=32, seed=0):
    """Seeded oriented-grating images with a class-dependent colour cast.

    Class ``c`` uses orientation ``_ORIENTATIONS[c % 2]``, spatial frequency
    ``_FREQUENCIES[(c // 2) % 5]`` and colour ``_PALETTE[c % 10]``; phase,
    amplitude, frequency jitter, colour jitter and pixel noise are random.
    Samples are ordered class-major.
    """
    if class_count < 2:
        raise ConfigError(f"class_count must be >= 2, got {class_count}")
    rng = np.random.default_rng([seed, 0x5EED])
    n = class_count * per_class
    labels = np.repeat(np.arange(class_count, dtype=np.int64), per_class)
    yy, xx = np.mgrid[0:image_size, 0:image_size].astype(np.float64) / image_size
    images = np.empty((n, 3, image_size, image_size), dtype=np.uint8)
    for i, c in enumerate(labels):
        theta = np.deg2rad(_ORIENTATIONS[c % 2])
        freq = _FREQUENCIES[(c // 2) % len(_FREQUENCIES)] * rng.uniform(0.9, 1.1)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(35, 60)
        wave = np.cos(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
        colour = _PALETTE[c % len(_PALETTE)] + rng.normal(0, 0.12, 3)
        base = 70 + 110 * colour
        img = base[:, None, None] + amp * wave[None] * (0.6 + 0.4 * colour[:, None, None])
        img += rng.normal(0, 18, img.shape)
        images[i] = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return Dataset(images, labels, class_count, f"{SYNTH_VERSION}:c{class_count}:n{per_class}:s{seed}")


# ---------------------------------------------------------------------------
# CIFAR-10 binary format
# ---------------------------------------------------------------------------

def write_cifar_records(path, images, labels):
    """Write (n, 3, 32, 32) uint8 images with labels in CIFAR-10 binary layout."""
    images = np.asarray(images)
    labels = np.asarray(labels)
    if images.dtype != np.uint8 or images.shape[1:] != (3, 32, 32):
        raise DataError(f"CIFAR records need uint8 (n, 3, 32, 32) images, got {images.dtype} {images.shape}")
    if labels.shape != (len(images),) or (len(labels) and (labels.min() < 0 or labels.max() > 255)):
        raise DataError("labels must be one byte per image")
    rec = np.empty((len(images), CIFAR_RECORD), dtype=np.uint8)
    rec[:, 0] = labels
    rec[:, 1:] = images.reshape(len(images), CIFAR_PIXELS)
    with open(path, "wb") as fh:
        fh.write(rec.tobytes())


def read_cifar_records(path, class_count=10, expected_records=None):
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % CIFAR_RECORD:
        raise FormatError(f"{path}: size {raw.size} is not a positive multiple of {CIFAR_RECORD}")
    rec = raw.reshape(-1, CIFAR_RECORD)
    if expected_records is not None and len(rec) != expected_records:
        raise FormatError(f"{path}: {len(rec)} records, expected {expected_records}")
    labels = rec[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels >= class_count)
    if bad.size:
        raise FormatError(f"{path}: record {bad[0]} has label byte {labels[bad[0]]} >= {class_count}")
    images = rec[:, 1:].reshape(-1, 3, 32, 32).copy()
    return images, labels


def load_cifar10_bin(directory, strict=True):
    """Return (train, test) datasets from the five train files and the test file.

    ``strict`` requires exactly 10,000 records per file as in the published
    archive; pass ``False`` for smaller files in the same record format.
    """
    expected = CIFAR_RECORDS_PER_FILE if strict else None
    parts = []
    for fname in CIFAR_TRAIN_FILES + (CIFAR_TEST_FILE,):
        path = os.path.join(directory, fname)
        if not os.path.exists(path):
            raise FormatError(f"missing CIFAR-10 file {path}")
        parts.append(read_cifar_records(path, 10, expected))
    train = Dataset(np.concatenate([p[0] for p in parts[:5]]),
                    np.concatenate([p[1] for p in parts[:5]]), 10, "cifar10-train")
    test = Dataset(parts[5][0], parts[5][1], 10, "cifar10-test")
    return train, test


def export_cifar_format(dataset, directory, train_files=5):
    """Write ``dataset`` as data_batch_1..N.bin (round-robin chunks) plus no test file."""
    os.makedirs(directory, exist_ok=True)
    chunks = np.array_split(np.arange(len(dataset)), train_files)
    for fname, idx in zip(CIFAR_TRAIN_FILES, chunks):
        write_cifar_records(os.path.join(directory, fname), dataset.images[idx], dataset.labels[idx])


# ---------------------------------------------------------------------------
# preprocessing and augmentation
# ---------------------------------------------------------------------------

def standardize(images):
    """Per-image standardization over all channels and pixels.

    Accepts one (c, h, w) image or a (n, c, h, w) batch and returns float32.
    Constant images map to zeros.
    """
    x = np.asarray(images, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x = x[None]
    flat = x.reshape(len(x), -1)
    mean = flat.mean(axis=1, keepdims=True)
    std = flat.std(axis=1, keepdims=True)
    safe = np.where(std > 0, std, 1.0)
    out = np.where(std > 0, (flat - mean) / safe, 0.0).reshape(x.shape).astype(np.float32)
    return out[0] if single else out


@dataclass(frozen=True)
class AugmentConfig:
    pad_pixels: int = 4
    crop: tuple = (32, 32)
    flip_prob: float = 0.5
    cutout: tuple = (16, 16)
    crop_enabled: bool = True
    flip_enabled: bool = True
    cutout_enabled: bool = True

    def validate(self, image_shape):
        h, w = image_shape[-2:]
        if self.crop_enabled and (self.crop[0] > h + 2 * self.pad_pixels or
                                  self.crop[1] > w + 2 * self.pad_pixels):
            raise ConfigError(f"crop {self.crop} exceeds padded size of {image_shape}")
        if not 0 <= self.flip_prob <= 1:
            raise ConfigError(f"flip_prob must lie in [0, 1], got {self.flip_prob}")
        if self.pad_pixels < 0 or min(self.cutout) < 0:
            raise ConfigError("pad and cutout sizes must be non-negative")
        return self

    @classmethod
    def disabled(cls):
        return cls(crop_enabled=False, flip_enabled=False, cutout_enabled=False)


def augment(image, config, seed):
    """Pad -> random crop -> random lr flip -> cutout, for one (c, h, w) image."""
    rng = np.random.default_rng(seed)
    out = image
    if config.crop_enabled:
        p = config.pad_pixels
        c, h, w = out.shape
        padded = np.zeros((c, h + 2 * p, w + 2 * p), dtype=out.dtype)
        padded[:, p:p + h, p:p + w] = out
        ch, cw = config.crop
        oy = rng.integers(0, padded.shape[1] - ch + 1)
        ox = rng.integers(0, padded.shape[2] - cw + 1)
        out = padded[:, oy:oy + ch, ox:ox + cw]
    if config.flip_enabled and rng.random() < config.flip_prob:
        out = out[:, :, ::-1]
    if config.cutout_enabled:
        out = np.array(out)
        h, w = out.shape[1:]
        cy, cx = rng.integers(0, h), rng.integers(0, w)
        hh, hw = config.cutout[0] // 2, config.cutout[1] // 2
        out[:, max(cy - hh, 0):min(cy - hh + config.cutout[0], h),
            max(cx - hw, 0):min(cx - hw + config.cutout[1], w)] = 0
    return np.ascontiguousarray(out)


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------

PROTOCOLS = ("plain", "incremental", "unseen")


@dataclass
class SplitPlan:
    protocol: str
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    labels: np.ndarray
    category_sets: dict = field(default_factory=dict)
    seed: int = 0

    def restrict(self, split, set_name=None):
        """Indices of ``split`` whose label belongs to category set ``set_name``."""
        idx = getattr(self, split)
        if set_name is None:
            return idx
        classes = np.asarray(self.category_sets[set_name])
        return idx[np.isin(self.labels[idx], classes)]


def make_splits(labels, class_count, protocol="plain", val_fraction=0.1, test_fraction=0.2,
                seed=0, new_classes=None, seen_classes=None):
    """Stratified, seeded train/val/test split plus the protocol's category sets.

    ``incremental`` defines ``old``/``new`` sets (default new = last class);
    ``unseen`` defines ``seen``/``unseen`` sets (default seen = first two).
    The unseen protocol's student trains on ``restrict('train', 'seen')`` and
    is scored on ``restrict('test', 'unseen')``.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if protocol not in PROTOCOLS:
        raise ConfigError(f"unknown protocol {protocol!r}")
    if val_fraction < 0 or test_fraction < 0 or val_fraction + test_fraction > 1:
        raise ConfigError(f"fractions must be non-negative and sum to <= 1, "
                          f"got val={val_fraction} test={test_fraction}")
    rng = np.random.default_rng([seed, 0x5971])
    train, val, test = [], [], []
    for c in range(class_count):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        n_test = int(round(test_fraction * len(idx)))
        n_val = int(round(val_fraction * len(idx)))
        test.append(idx[:n_test])
        val.append(idx[n_test:n_test + n_val])
        train.append(idx[n_test + n_val:])
    everything = list(range(class_count))

    def _classes(values, what):
        values = sorted(int(v) for v in values)
        if len(values) >= class_count or len(set(values)) != len(values):
            raise ConfigError(f"{what} set {values} must be a proper subset of {class_count} classes")
        if values and (values[0] < 0 or values[-1] >= class_count):
            raise ConfigError(f"{what} set {values} outside [0, {class_count})")
        return tuple(values)

    sets = {"all": tuple(everything)}
    if protocol == "incremental":
        new = _classes([class_count - 1] if new_classes is None else new_classes, "new")
        sets["new"] = new
        sets["old"] = tuple(c for c in everything if c not in new)
    elif protocol == "unseen":
        seen = _classes([0, 1] if seen_classes is None else seen_classes, "seen")
        sets["seen"] = seen
        sets["unseen"] = tuple(c for c in everything if c not in seen)
    return SplitPlan(protocol, np.sort(np.concatenate(train)), np.sort(np.concatenate(val)),
                     np.sort(np.concatenate(test)), labels, sets, seed)


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

@dataclass
class Batch:
    images: np.ndarray
    labels: np.ndarray | None
    indices: np.ndarray


def batches(images, labels, batch_size, epoch_seed, augment_config=None, workers=1, shuffle=True):
    """Yield seeded, optionally augmented batches; the last partial batch is kept.

    ``images`` are standardized float arrays.  The sequence is independent of
    ``workers``: augmentation seeds depend only on (epoch_seed, index).
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    n = len(images)
    order = np.random.default_rng([epoch_seed, 0xBA7C]).permutation(n) if shuffle else np.arange(n)
    pool = ThreadPoolExecutor(workers) if workers > 1 and augment_config is not None else None
    try:
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            if augment_config is None:
                x = images[idx]
            else:
                jobs = [(images[i], augment_config, (int(epoch_seed), int(i))) for i in idx]
                if pool is None:
                    out = [augment(*j) for j in jobs]
                else:
                    out = list(pool.map(lambda j: augment(*j), jobs))
                x = np.stack(out)
            y = None if labels is None else labels[idx]
            yield Batch(x, y, idx)
    finally:
        if pool is not None:
            pool.shutdown()
