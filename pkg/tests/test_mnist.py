import gzip
import struct
from fractions import Fraction

import numpy as np
import pytest

from satinit import mnist
from satinit.mnist import IdxError, SubsetSpec


def idx_images(count, rows, cols, payload):
    return struct.pack(">IIII", 0x803, count, rows, cols) + bytes(payload)


class TestParseImages:
    def test_small(self):
        imgs = mnist.parse_idx_images(idx_images(1, 2, 2, [0, 1, 2, 255]))
        assert (imgs.count, imgs.rows, imgs.cols) == (1, 2, 2)
        assert imgs.pixels[0].tolist() == [[0, 1], [2, 255]]

    def test_wrong_magic(self):
        data = struct.pack(">IIII", 0x801, 1, 2, 2) + bytes(4)
        with pytest.raises(IdxError, match="magic"):
            mnist.parse_idx_images(data)

    def test_truncated(self):
        with pytest.raises(IdxError, match="truncated"):
            mnist.parse_idx_images(idx_images(2, 2, 2, [0] * 4))

    def test_gzip(self):
        data = gzip.compress(idx_images(1, 1, 3, [7, 8, 9]))
        assert mnist.parse_idx_images(data).pixels.ravel().tolist() == [7, 8, 9]

    def test_encode_round_trip(self):
        px = np.arange(24, dtype=np.uint8).reshape(2, 3, 4)
        np.testing.assert_array_equal(mnist.parse_idx_images(mnist.encode_idx_images(px)).pixels, px)


class TestParseLabels:
    def test_first_mnist_labels(self):
        data = struct.pack(">II", 0x801, 3) + bytes([5, 0, 4])
        assert mnist.parse_idx_labels(data) == [5, 0, 4]

    def test_invalid_label(self):
        with pytest.raises(IdxError, match="invalid label"):
            mnist.parse_idx_labels(struct.pack(">II", 0x801, 1) + b"\x0a")

    def test_empty(self):
        assert mnist.parse_idx_labels(struct.pack(">II", 0x801, 0)) == []

    def test_truncated(self):
        with pytest.raises(IdxError):
            mnist.parse_idx_labels(struct.pack(">II", 0x801, 3) + b"\x01")

    def test_wrong_magic(self):
        with pytest.raises(IdxError):
            mnist.parse_idx_labels(struct.pack(">II", 0x803, 0))


def synthetic(n_per_class=3, classes=(0, 1), size=2, extra=()):
    labels = [c for c in classes for _ in range(n_per_class)] + list(extra)
    rng = np.random.default_rng(0)
    pixels = rng.integers(0, 256, (len(labels), size, size), dtype=np.uint8)
    return pixels, labels


class TestBinaryDataset:
    def test_balance(self):
        px, lab = synthetic(3, extra=[7, 7])
        ds = mnist.make_binary_dataset(px, lab, SubsetSpec(0, 1, n_train=4, n_val=2, seed=1))
        assert np.bincount(ds.labels[ds.train]).tolist() == [2, 2]
        assert np.bincount(ds.labels[ds.val]).tolist() == [1, 1]

    def test_same_class_rejected(self):
        with pytest.raises(ValueError):
            SubsetSpec(3, 3)

    def test_normalization(self):
        px = np.full((2, 2, 2), 255, dtype=np.uint8)
        ds = mnist.make_binary_dataset(px, [0, 1], SubsetSpec(0, 1, n_train=2),
                                       val_images=px, val_labels=[0, 1])
        assert np.all(ds.inputs == 1.0)
        assert ds.rational(0) == [Fraction(1)] * 4

    def test_class_mapping(self):
        px = np.zeros((4, 1, 1), dtype=np.uint8)
        px[[1, 3]] = 9
        lab = [3, 8, 3, 8]
        ds = mnist.make_binary_dataset(px, lab, SubsetSpec(8, 3, n_train=2, n_val=2))
        # digit 8 (class_a) -> index 0
        for i in range(4):
            assert ds.labels[i] == (0 if ds.pixels[i, 0] == 9 else 1)

    def test_insufficient(self):
        px, lab = synthetic(2)
        with pytest.raises(mnist.InsufficientSamples):
            mnist.make_binary_dataset(px, lab, SubsetSpec(0, 1, n_train=6, n_val=1))

    def test_separate_validation_pool(self):
        px, lab = synthetic(5)
        vpx, vlab = synthetic(4)
        ds = mnist.make_binary_dataset(px, lab, SubsetSpec(0, 1, n_train=10, seed=2), vpx, vlab)
        assert len(ds.train) == 10 and len(ds.val) == 8

    def test_disjoint_and_deterministic(self):
        px, lab = synthetic(20)
        spec = SubsetSpec(0, 1, n_train=25, n_val=9, seed=4)
        a = mnist.make_binary_dataset(px, lab, spec)
        b = mnist.make_binary_dataset(px, lab, spec)
        assert np.intersect1d(a.train, a.val).size == 0
        assert len(a.train) + len(a.val) == 34
        np.testing.assert_array_equal(a.pixels, b.pixels)
        lt = np.bincount(a.labels[a.train])
        assert abs(lt[0] - lt[1]) <= 1

    def test_float_conversion_error(self):
        px, lab = synthetic(4, size=4)
        ds = mnist.make_binary_dataset(px, lab, SubsetSpec(0, 1, n_train=4, n_val=4))
        for i in range(len(ds.labels)):
            exact = ds.rational(i)
            assert max(abs(float(q) - v) for q, v in zip(exact, ds.inputs[i])) < 1e-15
            assert all(q == Fraction(int(p), 255) for q, p in zip(exact, ds.pixels[i]))


class TestSubsample:
    def ds(self, n=50):
        px, lab = synthetic(n)
        return mnist.make_binary_dataset(px, lab, SubsetSpec(0, 1, n_train=2 * n - 2, n_val=2))

    def test_full(self):
        ds = self.ds(10)
        chosen = mnist.subsample_indices(ds, len(ds.train), 0)
        assert sorted(chosen) == sorted(ds.train)

    def test_balanced(self):
        ds = self.ds()
        sel = mnist.subsample(ds, 10, 3)
        assert sum(y for _, y in sel) == 5
        sel = mnist.subsample(ds, 11, 3)
        assert sum(y for _, y in sel) in (5, 6)

    def test_deterministic(self):
        ds = self.ds()
        assert mnist.subsample(ds, 12, 9) == mnist.subsample(ds, 12, 9)
        assert list(mnist.subsample_indices(ds, 12, 9)) != list(mnist.subsample_indices(ds, 12, 10))

    def test_too_large(self):
        ds = self.ds(5)
        with pytest.raises(mnist.InsufficientSamples):
            mnist.subsample(ds, len(ds.train) + 1, 0)


class TestDownsample:
    def test_block_mean(self):
        px = np.zeros((1, 4, 4), dtype=np.uint8)
        px[0, :2, :2] = [[255, 255], [255, 0]]
        out = mnist.downsample(px, 2)
        # (765 / 4) = 191.25 -> 191
        assert out[0].tolist() == [[191, 0], [0, 0]]

    def test_mnist_to_eight(self):
        px = np.full((2, 28, 28), 200, dtype=np.uint8)
        out = mnist.downsample(px, 8)
        assert out.shape == (2, 8, 8)
        # corners pick up two padding rows/cols out of a 4x4 block
        assert out[0, 0, 0] == round(200 * 4 / 16) and out[0, 3, 3] == 200

    def test_identity(self):
        px = np.arange(16, dtype=np.uint8).reshape(1, 4, 4)
        np.testing.assert_array_equal(mnist.downsample(px, 4), px)


def test_real_mnist_properties(mnist_dir):
    (tr, trl), (te, tel) = mnist.load_mnist_dir(mnist_dir)
    ds = mnist.make_binary_dataset(tr, trl, SubsetSpec(0, 1, n_train=400), te, tel)
    x = ds.inputs
    assert x.shape[1] == 784
    assert x.min() >= 0 and x.max() <= 1
    assert np.all(x.max(axis=1) > 0)
    assert abs(int(ds.labels[ds.val].sum()) * 2 - len(ds.val)) <= 1
