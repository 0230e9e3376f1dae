import gzip
import struct

import numpy as np
import pytest

from dtvae import data
from dtvae.data import Dataset, IdxFormatError


def fixture_images(count=3, seed=0):
    return np.random.default_rng(seed).integers(0, 256, size=(count, 28, 28), dtype=np.uint8)


class TestIdx:
    def test_round_trip(self):
        pixels = fixture_images()
        out = data.load_idx_images(data.encode_idx_images(pixels))
        assert out.shape == (3, 784)
        np.testing.assert_array_equal(np.rint(out * 255).astype(np.uint8), pixels.reshape(3, 784))
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_gzip_detected(self):
        raw = data.encode_idx_images(fixture_images())
        np.testing.assert_array_equal(data.load_idx_images(gzip.compress(raw)), data.load_idx_images(raw))

    def test_wrong_magic(self):
        raw = bytearray(data.encode_idx_images(fixture_images()))
        raw[3] = 0x01
        with pytest.raises(IdxFormatError) as info:
            data.load_idx_images(bytes(raw))
        assert info.value.offset == 0

    def test_truncated(self):
        raw = data.encode_idx_images(fixture_images())
        with pytest.raises(IdxFormatError, match="truncated"):
            data.load_idx_images(raw[:-1])

    def test_short_header(self):
        with pytest.raises(IdxFormatError):
            data.load_idx_images(b"\x00\x00\x08")

    def test_wrong_image_size(self):
        raw = struct.pack(">4I", data.IMAGE_MAGIC, 1, 27, 28) + bytes(27 * 28)
        with pytest.raises(IdxFormatError, match="28x28"):
            data.load_idx_images(raw)

    def test_empty_file(self):
        assert data.load_idx_images(data.encode_idx_images(np.zeros((0, 28, 28)))).shape == (0, 784)

    def test_labels(self):
        np.testing.assert_array_equal(data.load_idx_labels(data.encode_idx_labels([3, 7])), [3, 7])

    def test_label_out_of_range(self):
        with pytest.raises(IdxFormatError) as info:
            data.load_idx_labels(data.encode_idx_labels([1, 12]))
        assert info.value.offset == 9


def test_load_mnist_from_dir(tiny_mnist_dir):
    ds = data.load_mnist(tiny_mnist_dir, "train")
    assert len(ds) == 10 and ds.images.shape == (10, 784)
    assert len(data.load_mnist(tiny_mnist_dir, "test")) == 6


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        data.load_mnist(str(tmp_path), "train")


def test_official_counts(mnist_dir):
    train = data.load_mnist(mnist_dir, "train")
    test = data.load_mnist(mnist_dir, "test")
    assert len(train) == 60000 and len(test) == 10000
    fit, valid = data.split_validation(train)
    assert len(fit) == 50000 and len(valid) == 10000
    np.testing.assert_array_equal(valid.images[-1], train.images[-1])


class TestBinarize:
    def test_extremes(self):
        rng = np.random.default_rng(0)
        img = np.array([[0.0, 1.0, 0.0, 1.0]])
        np.testing.assert_array_equal(data.dynamic_binarize(img, rng), img)

    def test_frequency(self):
        # each pixel is Bernoulli(p); the mean over N draws has SE sqrt(p(1-p)/N)
        rng = np.random.default_rng(1)
        p = np.array([0.1, 0.5, 0.9])
        draws = data.dynamic_binarize(np.tile(p, (200_000, 1)), rng)
        se = np.sqrt(p * (1 - p) / 200_000)
        assert np.all(np.abs(draws.mean(axis=0) - p) <= 4 * se)
        assert set(np.unique(draws)) <= {0.0, 1.0}


class TestMinibatches:
    def dataset(self, n=5):
        return Dataset(np.full((n, 784), 0.5), np.arange(n, dtype=np.uint8) % 10)

    def test_sizes(self):
        assert [len(b.x) for b in data.minibatches(self.dataset(), 2, 0, 0)] == [2, 2, 1]

    def test_covers_a_permutation(self):
        idx = np.concatenate([b.indices for b in data.minibatches(self.dataset(37), 8, 3, 1)])
        np.testing.assert_array_equal(np.sort(idx), np.arange(37))

    def test_deterministic_per_epoch(self):
        ds = self.dataset(20)
        a = [b.x for b in data.minibatches(ds, 6, 0, 2)]
        b = [b.x for b in data.minibatches(ds, 6, 0, 2)]
        c = [b.x for b in data.minibatches(ds, 6, 0, 3)]
        assert all(np.array_equal(x, y) for x, y in zip(a, b))
        assert not all(np.array_equal(x, y) for x, y in zip(a, c))

    def test_bad_batch(self):
        with pytest.raises(ValueError):
            next(data.minibatches(self.dataset(), 0, 0, 0))
