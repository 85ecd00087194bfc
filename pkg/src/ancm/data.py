"""Datasets: IDX files, synthetic blobs, normalization, augmentation, batching."""

import csv
import gzip
import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConsistencyError, DegenerateInputError, ParseError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    """Samples with 0-based integer labels.

    ``samples`` is ``N x C x H x W`` for images or ``N x d`` for flat
    features. ``norm_stats`` holds the ``(mean, std)`` used to normalize the
    samples, or ``None`` when they are raw.
    """

    samples: np.ndarray
    labels: np.ndarray
    num_classes: int
    norm_stats: tuple = None

    def __post_init__(self):
        if len(self.samples) != len(self.labels):
            raise ConsistencyError(
                f"{len(self.samples)} samples but {len(self.labels)} labels"
            )
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in 0..{self.num_classes - 1}")

    def __len__(self):
        return len(self.labels)

    @property
    def sample_shape(self):
        return tuple(self.samples.shape[1:])

    def subset(self, indices):
        return replace(self, samples=self.samples[indices], labels=self.labels[indices])


# -- IDX --------------------------------------------------------------------


def _read_bytes(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    return data


def _parse_idx(data, magic, what):
    if len(data) < 4:
        raise ParseError(f"{what}: file too short for magic number", 0)
    found = struct.unpack(">I", data[:4])[0]
    if found != magic:
        raise ParseError(f"{what}: wrong magic 0x{found:08x}, expected 0x{magic:08x}", 0)
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(data) < header:
        raise ParseError(f"{what}: truncated header", len(data))
    dims = struct.unpack(f">{ndim}I", data[4:header])
    count = int(np.prod(dims))
    if len(data) < header + count:
        raise ParseError(
            f"{what}: truncated payload, need {count} bytes, found {len(data) - header}",
            len(data),
        )
    if len(data) > header + count:
        raise ParseError(f"{what}: {len(data) - header - count} trailing bytes", header + count)
    return np.frombuffer(data, dtype=np.uint8, count=count, offset=header).reshape(dims)


def load_idx(images_path, labels_path, num_classes=None):
    """Read an IDX image/label pair (optionally gzip-compressed).

    Pixels are mapped from bytes to ``[0, 1]`` and given a channel axis, so
    ``N x H x W`` images become ``N x 1 x H x W``.
    """
    images = _parse_idx(_read_bytes(images_path), IDX_IMAGES_MAGIC, str(images_path))
    labels = _parse_idx(_read_bytes(labels_path), IDX_LABELS_MAGIC, str(labels_path))
    if images.shape[0] != labels.shape[0]:
        raise ConsistencyError(
            f"{images_path} holds {images.shape[0]} images but {labels_path} holds {labels.shape[0]} labels"
        )
    samples = images.astype(np.float64)[:, None, :, :] / 255.0
    labels = labels.astype(np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if labels.size else 0
    return Dataset(samples, labels, num_classes)


def write_idx(dataset, images_path, labels_path):
    """Write a single-channel image dataset with pixels in ``[0, 1]`` as IDX."""
    s = dataset.samples
    if s.ndim == 4:
        if s.shape[1] != 1:
            raise ValueError("IDX images must have a single channel")
        s = s[:, 0]
    pixels = np.rint(np.clip(s, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">I", IDX_IMAGES_MAGIC))
        fh.write(struct.pack(">3I", *pixels.shape))
        fh.write(pixels.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, len(dataset.labels)))
        fh.write(dataset.labels.astype(np.uint8).tobytes())


# -- normalization and augmentation -----------------------------------------


def normalize_global(dataset, stats=None):
    """Subtract one global mean and divide by one global std.

    Pass ``stats`` (e.g. the training set's ``norm_stats``) to normalize a
    test set with the training statistics.
    """
    x = dataset.samples
    if stats is None:
        if len(dataset) < 2:
            raise DegenerateInputError("need at least 2 samples to normalize")
        mean = float(x.mean())
        std = float(x.std())
        if not std > 0:
            raise DegenerateInputError("dataset has zero variance; cannot normalize")
        stats = (mean, std)
    mean, std = stats
    return replace(dataset, samples=(x - mean) / std, norm_stats=(float(mean), float(std)))


def augment_pad_crop_flip(batch, pad=4, crop=None, flip_prob=0.5, seed=0):
    """Zero-pad, take a random crop, and mirror horizontally at random.

    ``batch`` is ``B x C x H x W``; ``crop`` defaults to ``(H, W)``. Each
    image gets its own offsets and flip decision.
    """
    x = np.asarray(batch, dtype=np.float64)
    B, C, H, W = x.shape
    if crop is None:
        crop = (H, W)
    elif np.isscalar(crop):
        crop = (int(crop), int(crop))
    ch, cw = crop
    if ch > H + 2 * pad or cw > W + 2 * pad:
        raise ValueError(f"crop {crop} larger than padded image {(H + 2 * pad, W + 2 * pad)}")
    rng = np.random.default_rng(seed)
    padded = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oy = rng.integers(0, H + 2 * pad - ch + 1, size=B)
    ox = rng.integers(0, W + 2 * pad - cw + 1, size=B)
    flip = rng.random(B) < flip_prob
    out = np.empty((B, C, ch, cw))
    for i in range(B):
        img = padded[i, :, oy[i]:oy[i] + ch, ox[i]:ox[i] + cw]
        out[i] = img[:, :, ::-1] if flip[i] else img
    return out


def hflip(batch):
    return np.asarray(batch)[..., ::-1]


# -- synthetic data ----------------------------------------------------------


def make_blobs(num_classes, dim, n_per_class, centers, spread, seed=0):
    """Isotropic Gaussian clusters, one per row of ``centers``."""
    centers = np.asarray(centers, dtype=np.float64)
    if centers.shape != (num_classes, dim):
        raise ValueError(f"centers must be {num_classes} x {dim}, got {centers.shape}")
    if not spread > 0:
        raise ValueError(f"spread must be positive, got {spread}")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((num_classes, n_per_class, dim))
    samples = (centers[:, None, :] + spread * noise).reshape(-1, dim)
    labels = np.repeat(np.arange(num_classes), n_per_class)
    return Dataset(samples, labels, num_classes)


def blob_centers(num_classes, dim, separation, seed=0):
    """Class centers at distance ``separation`` from the origin.

    Evenly spaced on the circle for ``dim == 2``, along the coordinate axes
    when ``num_classes <= dim``, otherwise random unit directions.
    """
    if dim == 2:
        t = 2 * np.pi * np.arange(num_classes) / num_classes
        dirs = np.stack([np.cos(t), np.sin(t)], axis=1)
    elif num_classes <= dim:
        dirs = np.eye(num_classes, dim)
    else:
        dirs = np.random.default_rng([seed, 3]).standard_normal((num_classes, dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return separation * dirs


def save_csv(dataset, path):
    x = dataset.samples.reshape(len(dataset), -1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label"] + [f"dim_{j}" for j in range(x.shape[1])])
        for label, row in zip(dataset.labels, x):
            w.writerow([int(label)] + [repr(float(v)) for v in row])


def load_csv(path, num_classes=None):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:1] != ["label"]:
        raise ParseError(f"{path}: missing 'label,dim_0,...' header", 0)
    try:
        labels = np.array([int(r[0]) for r in rows[1:]], dtype=np.int64)
        samples = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=np.float64)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None
    samples = samples.reshape(len(labels), len(rows[0]) - 1)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if labels.size else 0
    return Dataset(samples, labels, num_classes)


# -- batching ----------------------------------------------------------------


def epoch_permutation(n, seed, epoch):
    return np.random.default_rng([seed, epoch]).permutation(n)


def batches(dataset, batch_size, seed, epoch):
    """Index arrays partitioning a shuffled epoch into chunks of ``batch_size``."""
    if batch_size < 1:
        raise ValueError(f"batch size must be >= 1, got {batch_size}")
    perm = epoch_permutation(len(dataset), seed, epoch)
    return [perm[i:i + batch_size] for i in range(0, len(perm), batch_size)]
