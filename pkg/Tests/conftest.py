"""
Shared fixtures: a separable toy dataset, tiny trained networks and
temporary MNIST-layout IDX files.
"""
import gzip
import os
import struct

import numpy as np
import pytest

from data_io import Dataset, Split
from network import MLPModel, TrainConfig, export_quantized, train

requires_mnist = pytest.mark.skipif(
    not (os.environ.get('MNIST_DIR') and os.environ.get('FEFETSIM_SLOW') == '1'),
    reason="set MNIST_DIR and FEFETSIM_SLOW=1 to run the full MNIST reproduction",
)


def block_dataset(per_class=50, classes=4, block=4, seed=0, split=Split.TRAIN) -> Dataset:
    """Class c lights up features [c*block, (c+1)*block); everything else is low noise."""
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(classes), per_class)
    rng.shuffle(labels)
    images = rng.uniform(0.0, 0.2, (len(labels), classes * block))
    for i, c in enumerate(labels):
        images[i, c * block:(c + 1) * block] = rng.uniform(0.8, 1.0, block)
    return Dataset(images, labels, split)


def idx_images_bytes(pixels: np.ndarray, magic: int = 2051) -> bytes:
    count, rows, cols = pixels.shape
    return struct.pack('>IIII', magic, count, rows, cols) + pixels.astype(np.uint8).tobytes()


def idx_labels_bytes(labels: np.ndarray, magic: int = 2049) -> bytes:
    return struct.pack('>II', magic, len(labels)) + np.asarray(labels, dtype=np.uint8).tobytes()


@pytest.fixture
def block_train():
    return block_dataset(seed=0)


@pytest.fixture
def block_test():
    return block_dataset(per_class=25, seed=1, split=Split.TEST)


@pytest.fixture(scope='module')
def trained_bnn():
    """Single-layer binary network on the block data: (model, cfg, qnet, test set)."""
    cfg = TrainConfig(epochs=15, batch_size=16, learning_rate=0.5, seed=3, levels=2)
    model = MLPModel.initialize([16, 4], seed=3)
    trained, history = train(model, block_dataset(seed=0), cfg)
    qnet = export_quantized(trained, cfg.fraction_set, cfg.levels)
    return trained, cfg, qnet, block_dataset(per_class=25, seed=1, split=Split.TEST)


@pytest.fixture
def hidden_qnet():
    """Untrained two-layer binary network with a hidden layer."""
    model = MLPModel.initialize([16, 8, 4], seed=11)
    return export_quantized(model, np.array([0.0, 1.0]), 2)


@pytest.fixture
def mnist_dir(tmp_path):
    """MNIST-named IDX files: 6 training images (gzipped) and 4 test images (plain)."""
    rng = np.random.default_rng(5)
    train_pixels = rng.integers(0, 256, (6, 28, 28), dtype=np.uint8)
    test_pixels = rng.integers(0, 256, (4, 28, 28), dtype=np.uint8)
    test_pixels[0, 0, 0] = 0
    test_pixels[0, 0, 1] = 255
    with gzip.open(tmp_path / 'train-images-idx3-ubyte.gz', 'wb') as f:
        f.write(idx_images_bytes(train_pixels))
    with gzip.open(tmp_path / 'train-labels-idx1-ubyte.gz', 'wb') as f:
        f.write(idx_labels_bytes(np.array([0, 1, 2, 3, 4, 5])))
    (tmp_path / 't10k-images-idx3-ubyte').write_bytes(idx_images_bytes(test_pixels))
    (tmp_path / 't10k-labels-idx1-ubyte').write_bytes(idx_labels_bytes(np.array([7, 2, 1, 0])))
    return tmp_path
