import os

import pytest

from dtvae import data

MNIST_DIR = os.environ.get("DTVAE_MNIST_DIR", "/root/data/mnist")
MNIST_STEMS = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
               "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")


def mnist_available(path: str = MNIST_DIR) -> bool:
    return all(any(os.path.exists(os.path.join(path, s + ext)) for ext in ("", ".gz")) for s in MNIST_STEMS)


@pytest.fixture(scope="session")
def mnist_dir():
    if not mnist_available():
        pytest.skip(f"MNIST IDX files not found in {MNIST_DIR} (set DTVAE_MNIST_DIR)")
    return MNIST_DIR


@pytest.fixture
def tiny_mnist_dir(tmp_path):
    """Ten-image fake MNIST in IDX format, train and test splits."""
    import numpy as np

    rng = np.random.default_rng(0)
    for prefix, count in (("train", 10), ("t10k", 6)):
        pixels = rng.integers(0, 256, size=(count, 28, 28), dtype=np.uint8)
        (tmp_path / f"{prefix}-images-idx3-ubyte").write_bytes(data.encode_idx_images(pixels))
        (tmp_path / f"{prefix}-labels-idx1-ubyte").write_bytes(data.encode_idx_labels(rng.integers(0, 10, count)))
    return str(tmp_path)
