"""Datasets, view augmentation, covariate-shift corruption and file loaders."""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    ContractError,
    CountMismatchError,
    TruncatedFileError,
)
from .tensor import Tensor

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CORRUPTION_LEVELS = (1, 2, 3, 4, 5)


@dataclass
class Dataset:
    """Features ``x`` [n, p] as a float64 array with integer labels ``y`` [n].

    ``n == 0`` is allowed only for the held-out part of a split with
    ``train_frac == 1``.
    """

    x: np.ndarray
    y: np.ndarray
    num_classes: int
    name: str = "dataset"
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 2 or self.y.ndim != 1 or self.x.shape[0] != self.y.shape[0]:
            raise ContractError(f"bad dataset shapes x={self.x.shape} y={self.y.shape}")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.num_classes):
            raise ContractError(f"labels must lie in 0..{self.num_classes - 1}")
        if not np.isfinite(self.x).all():
            raise ContractError("dataset features must be finite")

    def __len__(self):
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def subset(self, idx, name: str | None = None) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.x[idx], self.y[idx], self.num_classes, name or self.name,
                       dict(self.provenance))

    def tensor(self) -> Tensor:
        return Tensor(self.x)


def gen_synthetic(num_classes: int, per_class: int, dim: int, spread: float, seed: int,
                  name: str = "synthetic") -> Dataset:
    """Gaussian mixture with class centres on the unit sphere.

    Each sample is its class centre plus isotropic noise of per-coordinate
    standard deviation ``spread``.  Samples are grouped by class.
    """
    if num_classes < 2 or per_class < 1 or dim < 2:
        raise ContractError("need num_classes >= 2, per_class >= 1 and dim >= 2")
    if spread < 0:
        raise ContractError("spread must be >= 0")
    rng = np.random.default_rng([seed, 0xDA7A])
    centres = rng.normal(size=(num_classes, dim))
    centres /= np.linalg.norm(centres, axis=1, keepdims=True)
    y = np.repeat(np.arange(num_classes), per_class)
    x = centres[y] + spread * rng.normal(size=(y.size, dim))
    prov = {"generator": "gaussian_mixture", "seed": seed, "spread": spread}
    return Dataset(x, y, num_classes, name, prov)


@dataclass
class AugmentConfig:
    noise_sigma: float = 0.1
    mask_prob: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.noise_sigma < 0 or not 0 <= self.mask_prob <= 1:
            raise ContractError(f"invalid augmentation config {self}")


def augment(x, cfg: AugmentConfig, draw: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Two independent views: additive Gaussian noise, then coordinate masking."""
    x = np.asarray(x, dtype=np.float64)

    def view():
        v = x + cfg.noise_sigma * draw.standard_normal(x.shape) if cfg.noise_sigma else x.copy()
        if cfg.mask_prob:
            v = np.where(draw.random(x.shape) < cfg.mask_prob, 0.0, v)
        return v

    return view(), view()


def corrupt(d: Dataset, level: int, seed: int) -> Dataset:
    """Additive Gaussian noise with per-feature sigma ``level * 0.1 * std(feature)``."""
    if level not in CORRUPTION_LEVELS:
        raise ContractError(f"corruption level must be in 1..5, got {level}")
    base = 0.1 * d.x.std(axis=0)
    rng = np.random.default_rng([seed, level, 0xC0])
    x = d.x + rng.standard_normal(d.x.shape) * (level * base)
    prov = dict(d.provenance, corruption="gaussian_noise", level=level)
    return Dataset(x, d.y.copy(), d.num_classes, f"{d.name}-noise{level}", prov)


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def split(d: Dataset, train_frac: float, label_frac: float,
          seed: int) -> tuple[Dataset, Dataset, Dataset]:
    """Stratified, shuffled ``(train, probe_labeled, test)`` split.

    Per class, ``round(train_frac * n_c)`` samples go to train and
    ``round(label_frac * n_train_c)`` of those are labeled for the probe.
    """
    for name, v in (("train_frac", train_frac), ("label_frac", label_frac)):
        if not 0 < v <= 1:
            raise ContractError(f"{name} must lie in (0, 1], got {v}")
    rng = np.random.default_rng([seed, 0x5B11])
    train_idx, test_idx, lab_idx = [], [], []
    for c in range(d.num_classes):
        idx = np.flatnonzero(d.y == c)
        idx = idx[rng.permutation(idx.size)]
        n_train = _round_half_up(train_frac * idx.size)
        tr = idx[:n_train]
        n_lab = _round_half_up(label_frac * tr.size)
        if n_lab == 0:
            raise ContractError(
                f"label_frac={label_frac} leaves class {c} without labeled samples"
            )
        train_idx.append(tr)
        test_idx.append(idx[n_train:])
        lab_idx.append(tr[:n_lab])
    tr, te, lab = (np.sort(np.concatenate(p)) for p in (train_idx, test_idx, lab_idx))
    return (d.subset(tr, f"{d.name}-train"), d.subset(lab, f"{d.name}-labeled"),
            d.subset(te, f"{d.name}-test"))


# ----------------------------------------------------------------- loaders


def _read_header(buf: bytes, n_dims: int, path) -> tuple[int, ...]:
    need = 4 * (1 + n_dims)
    if len(buf) < need:
        raise TruncatedFileError(f"{path}: header needs {need} bytes, file has {len(buf)}")
    return struct.unpack(f">{1 + n_dims}I", buf[:need])


def load_idx(images_path, labels_path, num_classes: int | None = None) -> Dataset:
    """Read an IDX image/label pair; pixels are scaled to [0, 1] and flattened."""
    images_path, labels_path = Path(images_path), Path(labels_path)
    ibuf = images_path.read_bytes()
    lbuf = labels_path.read_bytes()
    magic = _read_header(ibuf, 0, images_path)[0]
    if magic != IDX_IMAGES_MAGIC:
        raise BadMagicError(f"{images_path}: bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")
    magic = _read_header(lbuf, 0, labels_path)[0]
    if magic != IDX_LABELS_MAGIC:
        raise BadMagicError(f"{labels_path}: bad magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")
    _, n_img, rows, cols = _read_header(ibuf, 3, images_path)
    _, n_lab = _read_header(lbuf, 1, labels_path)
    if n_img != n_lab:
        raise CountMismatchError(f"{n_img} images but {n_lab} labels")
    body = ibuf[16:]
    if len(body) < n_img * rows * cols:
        raise TruncatedFileError(
            f"{images_path}: expected {n_img * rows * cols} pixel bytes, found {len(body)}"
        )
    if len(lbuf) - 8 < n_lab:
        raise TruncatedFileError(f"{labels_path}: expected {n_lab} label bytes, found {len(lbuf) - 8}")
    pixels = np.frombuffer(body, dtype=np.uint8, count=n_img * rows * cols)
    x = pixels.reshape(n_img, rows * cols).astype(np.float64) / 255.0
    y = np.frombuffer(lbuf, dtype=np.uint8, count=n_lab, offset=8).astype(np.int64)
    c = num_classes if num_classes is not None else int(y.max()) + 1 if y.size else 1
    return Dataset(x, y, c, images_path.stem,
                   {"format": "idx", "images": str(images_path), "labels": str(labels_path)})


def load_csv(path, num_classes: int | None = None) -> Dataset:
    """Header row, real-valued feature columns, integer label in the last column."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 2:
            raise ContractError(f"{path}: need a header with at least one feature and a label")
        xs, ys = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ContractError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            xs.append([float(v) for v in row[:-1]])
            ys.append(int(row[-1]))
    y = np.asarray(ys, dtype=np.int64)
    c = num_classes if num_classes is not None else int(y.max()) + 1
    return Dataset(np.asarray(xs, dtype=np.float64).reshape(len(xs), len(header) - 1), y, c,
                   path.stem, {"format": "csv", "path": str(path), "columns": header})
