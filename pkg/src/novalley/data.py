"""Datasets: CSV / IDX ingestion, Gaussian-blob synthesis and input jitter.

Labels are held 0-based.  CSV files carry 1-based labels in the last
column; IDX label files carry the raw class byte (0-based, as in MNIST).
"""
from __future__ import annotations

import gzip
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError
from .losses import one_hot

log = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    m: int
    provenance: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        if self.X.ndim != 2:
            raise ValidationError(f"X must be 2-D, got shape {self.X.shape}")
        if len(self.X) < 1:
            raise ValidationError("dataset is empty")
        if len(self.y) != len(self.X):
            raise ValidationError(f"{len(self.y)} labels for {len(self.X)} samples")
        if self.y.min() < 0 or self.y.max() >= self.m:
            raise ValidationError(f"labels must lie in [0, {self.m})")
        if not np.all(np.isfinite(self.X)):
            raise ValidationError("X has non-finite entries")

    @property
    def N(self):
        return len(self.X)

    @property
    def d(self):
        return self.X.shape[1]

    @property
    def Y(self):
        return one_hot(self.y, self.m)

    def subset(self, index):
        index = np.asarray(index)
        return Dataset(self.X[index], self.y[index], self.m, self.provenance, dict(self.meta))

    def split(self, n_first):
        return self.subset(np.arange(n_first)), self.subset(np.arange(n_first, self.N))


# ---------------------------------------------------------------------- CSV

def _load_csv(path, m=None):
    rows, labels = [], []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if width is None:
                width = len(parts)
            if len(parts) != width or width < 2:
                raise ParseError(f"expected {width} fields, got {len(parts)}", f"line {lineno}")
            try:
                rows.append([float(v) for v in parts[:-1]])
                label = int(parts[-1])
            except ValueError as exc:
                raise ParseError(str(exc), f"line {lineno}") from None
            if label < 1 or (m is not None and label > m):
                raise ValidationError(f"label {label} out of range at line {lineno}")
            labels.append(label - 1)
    if not rows:
        raise ParseError("no data rows", "line 1")
    y = np.array(labels)
    return Dataset(np.array(rows), y, int(y.max()) + 1 if m is None else m, f"csv:{path}")


def _save_csv(dataset, path):
    with open(path, "w") as fh:
        for x, label in zip(dataset.X, dataset.y):
            fh.write(",".join(repr(float(v)) for v in x) + f",{int(label) + 1}\n")


# ---------------------------------------------------------------------- IDX

def _read_bytes(path):
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def read_idx(path, expect_magic=None):
    """Parse an unsigned-byte IDX file into an ndarray."""
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise ParseError("truncated header", "byte 0")
    (magic,) = struct.unpack(">I", raw[:4])
    if expect_magic is not None and magic != expect_magic:
        raise ParseError(f"bad magic 0x{magic:08x}, expected 0x{expect_magic:08x}", "byte 0")
    if magic >> 8 != 0x08:
        raise ParseError(f"unsupported IDX element type in magic 0x{magic:08x}", "byte 2")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise ParseError("truncated dimension header", f"byte {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims)) if dims else 0
    if len(raw) - header != count:
        raise ParseError(f"payload has {len(raw) - header} bytes, header promises {count}", f"byte {header}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def write_idx(path, array):
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise ValidationError("IDX writer only handles uint8 payloads")
    magic = 0x00000800 | array.ndim
    opener = gzip.open if Path(path).suffix == ".gz" else open
    with opener(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(array.tobytes())


def _labels_path(images_path):
    p = str(images_path)
    for a, b in (("images-idx3", "labels-idx1"), ("images.idx3", "labels.idx1"), ("-images", "-labels")):
        if a in p:
            return p.replace(a, b)
    raise ValidationError(f"cannot derive a label file name from {images_path}; pass labels_path")


def _load_idx(path, labels_path=None, m=None):
    images = read_idx(path, IDX_IMAGES_MAGIC)
    labels = read_idx(labels_path or _labels_path(path), IDX_LABELS_MAGIC).astype(np.int64)
    if len(labels) != len(images):
        raise ValidationError(f"{len(labels)} labels for {len(images)} images")
    X = images.reshape(len(images), -1).astype(np.float64) / 255.0
    m = int(labels.max()) + 1 if m is None else m
    if labels.max() >= m:
        raise ValidationError(f"label {labels.max()} out of range for m = {m}")
    return Dataset(X, labels, m, f"idx:{path}")


def _save_idx(dataset, path, labels_path=None, shape=None):
    pixels = np.rint(dataset.X * 255.0)
    if np.any(np.abs(pixels - dataset.X * 255.0) > 1e-9) or pixels.min() < 0 or pixels.max() > 255:
        raise ValidationError("IDX export needs X on the k/255 grid")
    if shape is None:
        # image files are rank 3: square when d allows, otherwise one row
        side = int(round(np.sqrt(dataset.d)))
        shape = (side, side) if side * side == dataset.d else (1, dataset.d)
    write_idx(path, pixels.astype(np.uint8).reshape((dataset.N,) + tuple(shape)))
    write_idx(labels_path or _labels_path(path), dataset.y.astype(np.uint8))


def load_dataset(path, format=None, labels_path=None, m=None) -> Dataset:
    """Load ``csv`` (features..., 1-based label) or an ``idx`` image/label pair."""
    format = format or ("csv" if str(path).endswith(".csv") else "idx")
    if format == "csv":
        return _load_csv(path, m)
    if format == "idx":
        return _load_idx(path, labels_path, m)
    raise ValidationError(f"unknown dataset format {format!r}")


def save_dataset(dataset, path, format=None, labels_path=None):
    format = format or ("csv" if str(path).endswith(".csv") else "idx")
    if format == "csv":
        _save_csv(dataset, path)
    elif format == "idx":
        _save_idx(dataset, path, labels_path)
    else:
        raise ValidationError(f"unknown dataset format {format!r}")


# ---------------------------------------------------------------- synthesis

def _class_means(d, m, separation):
    means = np.zeros((m, d))
    if d >= m:
        means[np.arange(m), np.arange(m)] = separation / np.sqrt(2.0)
    elif m == 1:
        pass
    elif d == 1:
        means[:, 0] = separation * np.arange(m)
    else:
        # regular polygon in the first two coordinates, neighbours `separation` apart
        radius = separation / (2.0 * np.sin(np.pi / m))
        angles = 2.0 * np.pi * np.arange(m) / m
        means[:, 0] = radius * np.cos(angles)
        means[:, 1] = radius * np.sin(angles)
    return means


def synth_dataset(n, d, m, separation=3.0, seed=None) -> Dataset:
    """Balanced Gaussian blobs (unit variance), one per class, all samples distinct."""
    if n < m:
        raise ValidationError(f"need n >= m, got n = {n}, m = {m}")
    rng = np.random.default_rng(seed)
    y = rng.permutation(np.arange(n) % m)
    means = _class_means(d, m, separation)
    X = means[y] + rng.standard_normal((n, d))
    while True:
        _, first = np.unique(X, axis=0, return_index=True)
        if len(first) == n:
            break
        dup = np.setdiff1d(np.arange(n), first)
        X[dup] = means[y[dup]] + rng.standard_normal((len(dup), d))
    return Dataset(X, y, m, f"synth:n={n},d={d},m={m},sep={separation},seed={seed}")


def jitter(dataset, magnitude, seed=None, spec=None) -> Dataset:
    """Add uniform noise in ``[-magnitude, magnitude]``; labels are untouched.

    With ``spec`` the distinct-patch condition is re-checked and logged; the
    outcome is stored in ``meta["distinct_patches_ok"]``.
    """
    if not magnitude > 0:
        raise ValidationError("jitter magnitude must be positive")
    rng = np.random.default_rng(seed)
    X = dataset.X + rng.uniform(-magnitude, magnitude, size=dataset.X.shape)
    out = Dataset(X, dataset.y.copy(), dataset.m, f"{dataset.provenance}+jitter({magnitude})", dict(dataset.meta))
    if spec is not None:
        from .netgraph import patch_collisions

        ok = not patch_collisions(spec, X, limit=1)
        out.meta["distinct_patches_ok"] = ok
        log.info("distinct patches after jitter: %s", ok)
    return out
