"""MNIST IDX ingestion and the seeded binary-classification subsets."""
from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

TRAIN_IMAGES = "train-images-idx3-ubyte"
TRAIN_LABELS = "train-labels-idx1-ubyte"
TEST_IMAGES = "t10k-images-idx3-ubyte"
TEST_LABELS = "t10k-labels-idx1-ubyte"

PIXEL_SCALE = 255
DEFAULT_N_TRAIN = 4888


class IdxError(ValueError):
    pass


class InsufficientSamples(ValueError):
    pass


@dataclass(frozen=True)
class IdxImages:
    count: int
    rows: int
    cols: int
    pixels: np.ndarray  # uint8, (count, rows, cols)


def _maybe_gunzip(data: bytes) -> bytes:
    if data[:2] == b"\x1f\x8b":
        return gzip.decompress(data)
    return data


def parse_idx_images(data: bytes) -> IdxImages:
    data = _maybe_gunzip(data)
    if len(data) < 16:
        raise IdxError("truncated IDX image header")
    magic, count, rows, cols = struct.unpack(">IIII", data[:16])
    if magic != IMAGES_MAGIC:
        raise IdxError(f"wrong magic 0x{magic:08x} for an IDX image file")
    need = count * rows * cols
    if len(data) - 16 < need:
        raise IdxError(f"truncated payload: need {need} pixel bytes, have {len(data) - 16}")
    pixels = np.frombuffer(data, dtype=np.uint8, count=need, offset=16).reshape(count, rows, cols)
    return IdxImages(count, rows, cols, pixels)


def parse_idx_labels(data: bytes) -> list[int]:
    data = _maybe_gunzip(data)
    if len(data) < 8:
        raise IdxError("truncated IDX label header")
    magic, count = struct.unpack(">II", data[:8])
    if magic != LABELS_MAGIC:
        raise IdxError(f"wrong magic 0x{magic:08x} for an IDX label file")
    if len(data) - 8 < count:
        raise IdxError(f"truncated payload: need {count} label bytes, have {len(data) - 8}")
    labels = list(data[8:8 + count])
    bad = [(k, v) for k, v in enumerate(labels) if v > 9]
    if bad:
        raise IdxError(f"invalid label {bad[0][1]} at index {bad[0][0]}")
    return labels


def encode_idx_images(pixels: np.ndarray) -> bytes:
    pixels = np.asarray(pixels, dtype=np.uint8)
    count, rows, cols = pixels.shape
    return struct.pack(">IIII", IMAGES_MAGIC, count, rows, cols) + pixels.tobytes()


def encode_idx_labels(labels) -> bytes:
    labels = bytes(int(v) for v in labels)
    return struct.pack(">II", LABELS_MAGIC, len(labels)) + labels


def _read(path_base: str) -> bytes:
    for path in (path_base, path_base + ".gz"):
        if os.path.exists(path):
            with open(path, "rb") as f:
                return f.read()
    raise FileNotFoundError(f"{path_base}[.gz] not found")


def load_mnist_dir(directory: str):
    """Return ``((train_images, train_labels), (test_images, test_labels))``."""
    out = []
    for img, lab in ((TRAIN_IMAGES, TRAIN_LABELS), (TEST_IMAGES, TEST_LABELS)):
        images = parse_idx_images(_read(os.path.join(directory, img)))
        labels = parse_idx_labels(_read(os.path.join(directory, lab)))
        if images.count != len(labels):
            raise IdxError(f"{img} has {images.count} images but {lab} has {len(labels)} labels")
        out.append((images, labels))
    return tuple(out)


def downsample(pixels: np.ndarray, side: int) -> np.ndarray:
    """Block-average square images to ``side x side``, keeping uint8 bytes.

    Images are zero-padded symmetrically to a multiple of ``side`` first
    (28 -> 32 for side 8), which only touches MNIST's empty border.
    """
    pixels = np.asarray(pixels)
    count, rows, cols = pixels.shape
    if rows != cols:
        raise ValueError("downsampling expects square images")
    if side == rows:
        return pixels.astype(np.uint8)
    if not 1 <= side <= rows:
        raise ValueError(f"cannot downsample {rows}x{cols} to {side}x{side}")
    block = -(-rows // side)
    padded = block * side
    lo = (padded - rows) // 2
    canvas = np.zeros((count, padded, padded), dtype=np.int64)
    canvas[:, lo:lo + rows, lo:lo + cols] = pixels
    sums = canvas.reshape(count, side, block, side, block).sum(axis=(2, 4))
    # round half up
    return ((2 * sums + block * block) // (2 * block * block)).astype(np.uint8)


@dataclass(frozen=True)
class SubsetSpec:
    class_a: int = 0
    class_b: int = 1
    n_train: int = DEFAULT_N_TRAIN
    n_val: int | None = None
    seed: int = 0

    def __post_init__(self):
        if not (0 <= self.class_a <= 9 and 0 <= self.class_b <= 9):
            raise ValueError("classes must be digits 0-9")
        if self.class_a == self.class_b:
            raise ValueError("class_a and class_b must differ")
        if self.n_train < 1 or (self.n_val is not None and self.n_val < 1):
            raise ValueError("split sizes must be positive")


@dataclass(frozen=True)
class Dataset:
    """Binary dataset; ``pixels`` are raw bytes, inputs are ``pixels / 255``."""
    pixels: np.ndarray  # uint8, (N, n)
    labels: np.ndarray  # int, (N,), class index 0 or 1
    train: np.ndarray  # indices
    val: np.ndarray
    scale: int = PIXEL_SCALE

    def __post_init__(self):
        if self.pixels.shape[0] != self.labels.shape[0]:
            raise ValueError("pixels and labels disagree on N")
        if np.intersect1d(self.train, self.val).size:
            raise ValueError("train and validation overlap")
        if len(self.train) + len(self.val) != len(self.labels):
            raise ValueError("train and validation must partition the samples")

    @property
    def inputs(self) -> np.ndarray:
        return self.pixels.astype(np.float64) / self.scale

    @property
    def n_inputs(self) -> int:
        return self.pixels.shape[1]

    def split(self, which: str):
        idx = self.train if which == "train" else self.val
        return self.inputs[idx], self.labels[idx]

    def rational(self, i: int) -> list[Fraction]:
        return [Fraction(int(p), self.scale) for p in self.pixels[i]]


def _balanced_take(order_a, order_b, n):
    """First ``ceil(n/2)`` of one class and ``floor(n/2)`` of the other."""
    na = (n + 1) // 2
    nb = n - na
    if na > len(order_a) or nb > len(order_b):
        na, nb = n // 2, n - n // 2
    if na > len(order_a) or nb > len(order_b):
        raise InsufficientSamples(f"need {n} samples split ~evenly, have {len(order_a)} and {len(order_b)}")
    return order_a[:na], order_b[:nb], order_a[na:], order_b[nb:]


def make_binary_dataset(images, labels, spec: SubsetSpec, val_images=None, val_labels=None,
                        side: int | None = None) -> Dataset:
    """Two-class dataset: ``class_a`` -> index 0, ``class_b`` -> index 1.

    With ``val_images`` given, validation samples come from that pool (the
    MNIST test files); otherwise both splits are drawn from ``images``.
    ``n_val=None`` takes every remaining sample that keeps the split balanced.
    """
    rng = np.random.default_rng(spec.seed)

    def pool(imgs, labs):
        pix = imgs.pixels if isinstance(imgs, IdxImages) else np.asarray(imgs)
        labs = np.asarray(labs)
        if pix.shape[0] != labs.shape[0]:
            raise ValueError(f"{pix.shape[0]} images but {labs.shape[0]} labels")
        if side is not None:
            pix = downsample(pix, side)
        pix = pix.reshape(pix.shape[0], -1)
        ia = np.flatnonzero(labs == spec.class_a)
        ib = np.flatnonzero(labs == spec.class_b)
        return pix, rng.permutation(ia), rng.permutation(ib)

    pix, ia, ib = pool(images, labels)
    ta, tb, ra, rb = _balanced_take(ia, ib, spec.n_train)
    if val_images is None:
        vpix, va_pool, vb_pool = pix, ra, rb
    else:
        vpix, va_pool, vb_pool = pool(val_images, val_labels)
    n_val = spec.n_val if spec.n_val is not None else 2 * min(len(va_pool), len(vb_pool)) + (len(va_pool) != len(vb_pool))
    if n_val < 1:
        raise InsufficientSamples("no samples left for validation")
    va, vb, _, _ = _balanced_take(va_pool, vb_pool, n_val)

    train_pix = np.concatenate([pix[ta], pix[tb]])
    train_lab = np.concatenate([np.zeros(len(ta), int), np.ones(len(tb), int)])
    val_pix = np.concatenate([vpix[va], vpix[vb]])
    val_lab = np.concatenate([np.zeros(len(va), int), np.ones(len(vb), int)])
    tperm = rng.permutation(len(train_lab))
    vperm = rng.permutation(len(val_lab))
    all_pix = np.concatenate([train_pix[tperm], val_pix[vperm]]).astype(np.uint8)
    all_lab = np.concatenate([train_lab[tperm], val_lab[vperm]])
    n_tr = len(train_lab)
    return Dataset(all_pix, all_lab, np.arange(n_tr), np.arange(n_tr, len(all_lab)))


def subsample(dataset: Dataset, m: int, seed: int) -> list[tuple[list[Fraction], int]]:
    """Seeded, class-balanced choice of ``m`` training samples as exact rationals."""
    return [(dataset.rational(i), int(dataset.labels[i])) for i in subsample_indices(dataset, m, seed)]


def subsample_indices(dataset: Dataset, m: int, seed: int) -> np.ndarray:
    if m < 1:
        raise ValueError("subsample size must be positive")
    if m > len(dataset.train):
        raise InsufficientSamples(f"asked for {m} samples, training split has {len(dataset.train)}")
    rng = np.random.default_rng(seed)
    lab = dataset.labels[dataset.train]
    ia = rng.permutation(dataset.train[lab == 0])
    ib = rng.permutation(dataset.train[lab == 1])
    if m == len(dataset.train):
        chosen = np.concatenate([ia, ib])
    else:
        # the larger class gets the odd sample
        if len(ia) >= len(ib):
            ta, tb, _, _ = _balanced_take(ia, ib, m)
        else:
            tb, ta, _, _ = _balanced_take(ib, ia, m)
        chosen = np.concatenate([ta, tb])
    return rng.permutation(chosen)
