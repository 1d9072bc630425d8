"""Synthetic layouts, class-balanced batch sampling, standardisation, IDX files."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import Batch
from .numkit import as_mat, check_finite

UNLABELED = -1

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxError(ValueError):
    pass


class IdxMagicError(IdxError):
    pass


class IdxTruncatedError(IdxError):
    pass


class IdxCountMismatchError(IdxError):
    pass


class InsufficientSamplesError(ValueError):
    pass


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.x = check_finite(as_mat(self.x), "dataset inputs")
        self.y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        if self.y.shape[0] != self.x.shape[0]:
            raise ValueError("one label (or UNLABELED) per row required")
        ok = (self.y == UNLABELED) | ((self.y >= 0) & (self.y < self.n_classes))
        if not ok.all():
            raise ValueError(f"labels must be in [0, {self.n_classes}) or UNLABELED")

    def __len__(self):
        return self.x.shape[0]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.x[idx], self.y[idx], self.n_classes)

    def unlabel(self) -> "Dataset":
        return Dataset(self.x, np.full_like(self.y, UNLABELED), self.n_classes)


def two_circles(n_per_circle: int = 40, r_inner: float = 1.0, r_outer: float = 2.0,
                noise_sd: float = 0.02, rng: np.random.Generator | None = None) -> Dataset:
    """Concentric circles, evenly spaced in angle, with Gaussian radial noise.

    The inner circle is class 0, the outer circle class 1.
    """
    if not r_outer > r_inner > 0:
        raise ValueError("need r_outer > r_inner > 0")
    if n_per_circle < 1:
        raise ValueError("n_per_circle must be positive")
    if rng is None:
        rng = np.random.default_rng(0)
    theta = np.arange(n_per_circle) * (2.0 * np.pi / n_per_circle)
    xs = []
    for r in (r_inner, r_outer):
        radius = r + noise_sd * rng.standard_normal(n_per_circle)
        xs.append(np.column_stack([radius * np.cos(theta), radius * np.sin(theta)]))
    y = np.repeat([0, 1], n_per_circle)
    return Dataset(np.vstack(xs), y, 2)


def two_moons(n_per_moon: int = 60, noise_sd: float = 0.05,
              rng: np.random.Generator | None = None) -> Dataset:
    """Interleaved half circles: (cos t, sin t) and (1 - cos t, 0.5 - sin t), t in [0, pi]."""
    if n_per_moon < 2:
        raise ValueError("n_per_moon must be >= 2")
    if rng is None:
        rng = np.random.default_rng(0)
    t = np.linspace(0.0, np.pi, n_per_moon)
    upper = np.column_stack([np.cos(t), np.sin(t)])
    lower = np.column_stack([1.0 - np.cos(t), 0.5 - np.sin(t)])
    x = np.vstack([upper, lower]) + noise_sd * rng.standard_normal((2 * n_per_moon, 2))
    return Dataset(x, np.repeat([0, 1], n_per_moon), 2)


def whiten(x, sd_floor: float = 1e-12):
    """Per-feature standardisation. Features with sd below ``sd_floor`` are only centred."""
    x = as_mat(x)
    if x.shape[0] < 2:
        raise ValueError("need at least two samples")
    mean = x.mean(axis=0)
    sd = x.std(axis=0)
    safe = np.where(sd < sd_floor, 1.0, sd)
    return (x - mean) / safe, mean, sd


def apply_whitening(x, mean, sd, sd_floor: float = 1e-12) -> np.ndarray:
    return (as_mat(x) - mean) / np.where(sd < sd_floor, 1.0, sd)


def one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


@dataclass
class SamplerState:
    rng: np.random.Generator
    class_pools: list = field(default_factory=list)
    unlabeled_pool: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))

    @classmethod
    def for_datasets(cls, labeled: Dataset, unlabeled: Dataset | None,
                     rng: np.random.Generator) -> "SamplerState":
        pools = [np.flatnonzero(labeled.y == c) for c in range(labeled.n_classes)]
        upool = np.arange(len(unlabeled)) if unlabeled is not None else np.zeros(0, np.int64)
        return cls(rng, pools, upool)


@dataclass
class InputBatch:
    """Sampled inputs, labeled rows first."""

    x: np.ndarray
    y: np.ndarray
    n_labeled: int
    labeled_idx: np.ndarray
    unlabeled_idx: np.ndarray

    @property
    def n_unlabeled(self) -> int:
        return self.x.shape[0] - self.n_labeled


def sample_batch(labeled: Dataset, unlabeled: Dataset | None, n_l: int, n_u: int,
                 state: SamplerState) -> InputBatch:
    """Class-balanced labeled draw plus a uniform unlabeled draw, labeled rows first.

    Each class contributes exactly ``n_l / C`` rows. Both parts are drawn
    without replacement.
    """
    c = labeled.n_classes
    if n_l % c:
        raise ValueError(f"n_l={n_l} is not divisible by the class count {c}")
    per = n_l // c
    idx = []
    for cls_, pool in enumerate(state.class_pools):
        if len(pool) < per:
            raise InsufficientSamplesError(
                f"class {cls_} has {len(pool)} labeled samples, batch needs {per}")
        idx.append(state.rng.choice(pool, size=per, replace=False))
    lab_idx = np.concatenate(idx).astype(np.int64) if idx else np.zeros(0, np.int64)
    if n_u and (unlabeled is None or len(state.unlabeled_pool) < n_u):
        raise InsufficientSamplesError(f"unlabeled pool smaller than n_u={n_u}")
    un_idx = (state.rng.choice(state.unlabeled_pool, size=n_u, replace=False).astype(np.int64)
              if n_u else np.zeros(0, np.int64))
    x = labeled.x[lab_idx]
    if n_u:
        x = np.vstack([x, unlabeled.x[un_idx]])
    return InputBatch(x, labeled.y[lab_idx], n_l, lab_idx, un_idx)


def make_batch(z, y_labels, n_classes: int) -> Batch:
    return Batch(z, one_hot(y_labels, n_classes), len(y_labels))


# ---------------------------------------------------------------------------
# IDX


def read_idx(images_path, labels_path, n_classes: int = 10) -> Dataset:
    images = _read_idx_file(Path(images_path), IDX_IMAGES_MAGIC, ndim=3)
    labels = _read_idx_file(Path(labels_path), IDX_LABELS_MAGIC, ndim=1)
    if images.shape[0] != labels.shape[0]:
        raise IdxCountMismatchError(
            f"{images.shape[0]} images but {labels.shape[0]} labels")
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    y = labels.astype(np.int64)
    n_classes = max(n_classes, int(y.max()) + 1 if y.size else n_classes)
    return Dataset(x, y, n_classes)


def _read_idx_file(path: Path, magic: int, ndim: int) -> np.ndarray:
    raw = path.read_bytes()
    header = 4 + 4 * ndim
    if len(raw) < 4:
        raise IdxTruncatedError(f"{path}: file shorter than the magic number")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise IdxMagicError(f"{path}: wrong magic 0x{found:08x}, expected 0x{magic:08x}")
    if len(raw) < header:
        raise IdxTruncatedError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) - header < count:
        raise IdxTruncatedError(f"{path}: payload has {len(raw) - header} bytes, expected {count}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def write_idx(images_path, labels_path, images, labels) -> None:
    """Write ``uint8`` images (n, rows, cols) and labels (n,) in IDX layout."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    if images.ndim != 3:
        raise ValueError("images must have shape (n, rows, cols)")
    with open(images_path, "wb") as f:
        f.write(struct.pack(">4I", IDX_IMAGES_MAGIC, *images.shape))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">2I", IDX_LABELS_MAGIC, labels.shape[0]))
        f.write(labels.tobytes())
