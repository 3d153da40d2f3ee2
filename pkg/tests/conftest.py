import numpy as np
import pytest

from dltest import tensornet as tn
from dltest.dataset import Dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_dataset(n=40, seed=0, side=8):
    """Random images whose label is decided by which quadrant is brightest."""
    rng = np.random.default_rng(seed)
    images = rng.random((n, 1, side, side)).astype(np.float32) * 0.2
    labels = rng.integers(0, 4, n)
    half = side // 2
    for img, y in zip(images, labels):
        r, c = divmod(int(y), 2)
        img[0, r * half:(r + 1) * half, c * half:(c + 1) * half] += 0.8
    return Dataset(np.clip(images, 0, 1), labels)


@pytest.fixture
def small_cnn():
    return tn.build_model([("conv2d", 3, 3), ("relu",), ("maxpool2d", 2), ("flatten",),
                           ("dense", 6), ("relu",), ("dense", 10), ("softmax",)],
                          input_shape=(1, 8, 8), seed=3)


def write_fake_mnist(directory, n_train=300, n_test=100, seed=0):
    """Tiny IDX files in the MNIST layout; the label is the row of a bright bar."""
    from dltest import dataset as D

    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for split, n in (("train", n_train), ("test", n_test)):
        images_name, labels_name = D.MNIST_FILES[split]
        labels = np.arange(n) % 10
        rng.shuffle(labels)
        pixels = (rng.random((n, 28, 28)) * 60).astype(np.uint8)
        for img, y in zip(pixels, labels):
            img[2 * y:2 * y + 5, 5:20] = 255
        D.write_idx_images(directory / images_name, pixels)
        D.write_idx_labels(directory / labels_name, labels)
    return directory


@pytest.fixture
def fake_mnist(tmp_path, monkeypatch):
    directory = write_fake_mnist(tmp_path / "mnist")
    monkeypatch.setenv("DLTEST_CACHE", str(tmp_path / "cache"))
    return directory


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
