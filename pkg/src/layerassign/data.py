"""Datasets: synthetic class-template tasks and the LASD / CSV file formats.

LASD record (little-endian)::

    b"LASD" u8 version=1  u8 dtype=0 (uint8 pixels)  u8 ndim  ndim x u32 dims
    raw pixel payload (prod(dims) bytes)
    b"LABL" u32 count  count x u16 labels

A dataset file holds one record (split 80/20 into train/val on load) or two
consecutive records (train, then val).
"""

from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "DataFormatError",
    "DatasetSplit",
    "generate_synthetic_task",
    "write_lasd",
    "read_lasd",
    "write_csv",
    "read_csv",
    "load_dataset",
    "save_dataset",
]

LASD_MAGIC = b"LASD"
LABEL_MAGIC = b"LABL"
LASD_VERSION = 1
TRAIN_FRACTION = 0.8


class DataFormatError(ValueError):
    pass


@dataclass
class DatasetSplit:
    """Train / validation images (uint8, ``N x C x H x W``) and labels.

    ``calib_idx`` selects the calibration subset from the training pool; it is
    drawn per run with :meth:`with_calibration`.
    """

    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray
    num_classes: int
    calib_idx: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.train_y = np.asarray(self.train_y, dtype=np.int64)
        self.val_y = np.asarray(self.val_y, dtype=np.int64)
        for name, y in (("train", self.train_y), ("val", self.val_y)):
            if len(y) and (y.min() < 0 or y.max() >= self.num_classes):
                raise DataFormatError(f"{name} labels fall outside [0, {self.num_classes})")
        if len(self.train_x) != len(self.train_y) or len(self.val_x) != len(self.val_y):
            raise DataFormatError("image and label counts differ")

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.train_x.shape[1:])

    @property
    def calib_x(self) -> np.ndarray:
        if self.calib_idx is None:
            raise ValueError("no calibration subset drawn; call with_calibration first")
        return self.train_x[self.calib_idx]

    def with_calibration(self, size: int, seed: int) -> "DatasetSplit":
        """Copy of the split with a deterministic calibration subset of the training pool."""
        size = min(size, len(self.train_x))
        if size < 1:
            raise ValueError("calibration subset must be non-empty")
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(len(self.train_x), size=size, replace=False))
        return DatasetSplit(self.train_x, self.train_y, self.val_x, self.val_y, self.num_classes, idx)

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.train_x, self.train_y, self.val_x, self.val_y):
            h.update(str(arr.shape).encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def _split(x: np.ndarray, y: np.ndarray, num_classes: int) -> DatasetSplit:
    n_train = int(round(TRAIN_FRACTION * len(x)))
    return DatasetSplit(x[:n_train], y[:n_train], x[n_train:], y[n_train:], num_classes)


def _smooth_field(rng: np.random.Generator, channels: int, size: int, scale: int) -> np.ndarray:
    """Random pattern with features around ``scale`` pixels, unit variance."""
    coarse = rng.standard_normal((channels, max(size // scale, 1), max(size // scale, 1)))
    up = np.kron(coarse, np.ones((scale, scale)))[:, :size, :size]
    # 3x3 box blur to soften the block edges
    p = np.pad(up, ((0, 0), (1, 1), (1, 1)), mode="wrap")
    blur = sum(p[:, i:i + size, j:j + size] for i in range(3) for j in range(3)) / 9.0
    return (blur - blur.mean()) / (blur.std() + 1e-12)


def generate_synthetic_task(seed: int, num_classes: int = 8, samples_per_class: int = 200,
                            shape: tuple[int, int, int] = (3, 32, 32), noise: float = 0.5) -> DatasetSplit:
    """Class-template image classification task.

    Every class owns a template mixing a coarse, a medium and a fine random
    pattern; classes share part of their components so that telling them
    apart needs features at several resolutions.  A sample is its class
    template, randomly shifted by up to ``round(4 * noise)`` pixels, mixed
    with a class-agnostic distractor (weight ``noise``) and Gaussian pixel
    noise (std ``noise``).  ``noise=0`` yields exact templates.

    Samples are shuffled and split 80/20 into train and validation.
    """
    if len(shape) != 3 or shape[1] != shape[2] or shape[1] < 4 or shape[0] < 1:
        raise DataFormatError(f"invalid image shape {shape}; need (C, S, S) with S >= 4")
    if num_classes < 2 or samples_per_class < 1:
        raise DataFormatError("need at least two classes and one sample per class")
    if noise < 0:
        raise DataFormatError("noise must be >= 0")
    c, size, _ = shape
    rng = np.random.default_rng(seed)
    scales = [max(size // 4, 1), max(size // 8, 1), max(size // 16, 1)]
    shared = [_smooth_field(rng, c, size, s) for s in scales]
    templates = []
    for _ in range(num_classes):
        own = [_smooth_field(rng, c, size, s) for s in scales]
        mix = rng.uniform(0.3, 0.7, size=len(scales))
        t = sum(m * o + (1 - m) * sh for m, o, sh in zip(mix, own, shared))
        templates.append(t / t.std())
    templates = np.stack(templates)

    n = num_classes * samples_per_class
    labels = np.repeat(np.arange(num_classes), samples_per_class)
    max_shift = int(round(4 * noise))
    images = np.empty((n, c, size, size))
    for i, lab in enumerate(labels):
        img = templates[lab]
        if max_shift:
            dy, dx = rng.integers(-max_shift, max_shift + 1, size=2)
            img = np.roll(img, (dy, dx), axis=(1, 2))
        if noise:
            distractor = _smooth_field(rng, c, size, scales[rng.integers(len(scales))])
            img = img + noise * distractor + noise * rng.standard_normal(img.shape)
        images[i] = img
    pixels = np.clip(np.round(128 + 40 * images), 0, 255).astype(np.uint8)
    order = rng.permutation(n)
    return _split(pixels[order], labels[order], num_classes)


# -- LASD ---------------------------------------------------------------------

def _lasd_record(x: np.ndarray, y: np.ndarray) -> bytes:
    x = np.ascontiguousarray(x, dtype=np.uint8)
    y = np.asarray(y)
    if len(y) and (y.min() < 0 or y.max() > 0xFFFF):
        raise DataFormatError("labels must fit in u16")
    head = LASD_MAGIC + struct.pack("<BBB", LASD_VERSION, 0, x.ndim) + struct.pack(f"<{x.ndim}I", *x.shape)
    labels = LABEL_MAGIC + struct.pack("<I", len(y)) + y.astype("<u2").tobytes()
    return head + x.tobytes() + labels


def write_lasd(split: DatasetSplit, path) -> None:
    Path(path).write_bytes(_lasd_record(split.train_x, split.train_y) + _lasd_record(split.val_x, split.val_y))


def _need(data: bytes, pos: int, n: int, what: str) -> bytes:
    if pos + n > len(data):
        raise DataFormatError(f"truncated LASD file reading {what}: expected {pos + n} bytes, got {len(data)}")
    return data[pos:pos + n]


def _read_record(data: bytes, pos: int):
    if _need(data, pos, 4, "magic") != LASD_MAGIC:
        raise DataFormatError(f"bad LASD magic at byte {pos}")
    version, dtype, ndim = struct.unpack("<BBB", _need(data, pos + 4, 3, "header"))
    if version != LASD_VERSION:
        raise DataFormatError(f"unsupported LASD version {version}, expected {LASD_VERSION}")
    if dtype != 0:
        raise DataFormatError(f"unsupported LASD dtype code {dtype}, expected 0 (uint8)")
    pos += 7
    dims = struct.unpack(f"<{ndim}I", _need(data, pos, 4 * ndim, "dims"))
    pos += 4 * ndim
    size = int(np.prod(dims)) if dims else 0
    x = np.frombuffer(_need(data, pos, size, "pixel payload"), dtype=np.uint8).reshape(dims)
    pos += size
    if _need(data, pos, 4, "label magic") != LABEL_MAGIC:
        raise DataFormatError(f"bad label-block magic at byte {pos}")
    (count,) = struct.unpack("<I", _need(data, pos + 4, 4, "label count"))
    pos += 8
    y = np.frombuffer(_need(data, pos, 2 * count, "labels"), dtype="<u2").astype(np.int64)
    pos += 2 * count
    if count != dims[0]:
        raise DataFormatError(f"{count} labels for {dims[0]} images")
    return x.copy(), y, pos


def read_lasd(path, num_classes: int | None = None) -> DatasetSplit:
    data = Path(path).read_bytes()
    records, pos = [], 0
    while pos < len(data):
        x, y, pos = _read_record(data, pos)
        records.append((x, y))
    if not records or len(records) > 2:
        raise DataFormatError(f"expected 1 or 2 LASD records, found {len(records)}")
    k = _num_classes(num_classes, *(y for _, y in records))
    if len(records) == 1:
        return _split(records[0][0], records[0][1], k)
    (tx, ty), (vx, vy) = records
    return DatasetSplit(tx, ty, vx, vy, k)


def _num_classes(declared, *label_sets) -> int:
    top = max((int(y.max()) for y in label_sets if len(y)), default=0) + 1
    if declared is None:
        return top
    if top > declared:
        raise DataFormatError(f"label {top - 1} out of range for {declared} classes")
    return declared


# -- CSV ----------------------------------------------------------------------

def write_csv(split: DatasetSplit, path) -> None:
    """Header ``#dims=CxHxW;train=N`` then ``label,pixel...`` rows (train first)."""
    dims = "x".join(str(d) for d in split.shape)
    buf = io.StringIO()
    buf.write(f"#dims={dims};train={len(split.train_x)}\n")
    for x, y in ((split.train_x, split.train_y), (split.val_x, split.val_y)):
        flat = x.reshape(len(x), -1)
        for lab, row in zip(y, flat):
            buf.write(str(int(lab)) + "," + ",".join(map(str, row.tolist())) + "\n")
    Path(path).write_text(buf.getvalue())


def read_csv(path, num_classes: int | None = None) -> DatasetSplit:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("#"):
        raise DataFormatError("CSV dataset must start with a '#dims=CxHxW' header line")
    fields = dict(kv.split("=", 1) for kv in lines[0][1:].split(";") if "=" in kv)
    if "dims" not in fields:
        raise DataFormatError("CSV header lacks dims=")
    dims = tuple(int(d) for d in fields["dims"].split("x"))
    width = int(np.prod(dims))
    rows = [ln for ln in lines[1:] if ln.strip()]
    y = np.empty(len(rows), dtype=np.int64)
    x = np.empty((len(rows), width), dtype=np.uint8)
    for i, ln in enumerate(rows):
        vals = ln.split(",")
        if len(vals) != width + 1:
            raise DataFormatError(f"row {i + 2}: expected {width + 1} values, got {len(vals)}")
        y[i] = int(vals[0])
        px = np.array(vals[1:], dtype=np.int64)
        if px.min() < 0 or px.max() > 255:
            raise DataFormatError(f"row {i + 2}: pixel outside 0..255")
        x[i] = px
    x = x.reshape((len(rows),) + dims)
    k = _num_classes(num_classes, y)
    if "train" in fields:
        n_train = int(fields["train"])
        return DatasetSplit(x[:n_train], y[:n_train], x[n_train:], y[n_train:], k)
    return _split(x, y, k)


def load_dataset(path, format: str | None = None, num_classes: int | None = None) -> DatasetSplit:
    """Load a ``lasd`` or ``csv`` dataset; the format defaults to the file suffix."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    fmt = format or ("csv" if path.suffix.lower() == ".csv" else "lasd")
    if fmt == "lasd":
        return read_lasd(path, num_classes)
    if fmt == "csv":
        return read_csv(path, num_classes)
    raise DataFormatError(f"unknown dataset format {fmt!r}")


def save_dataset(split: DatasetSplit, path, format: str | None = None) -> None:
    path = Path(path)
    fmt = format or ("csv" if path.suffix.lower() == ".csv" else "lasd")
    (write_csv if fmt == "csv" else write_lasd)(split, path)
