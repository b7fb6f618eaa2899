import gzip
import os
import struct
from pathlib import Path

import numpy as np
import pytest

from synfire_bp import dataio

DEFAULT_MNIST = "/root/data/mnist"


def mnist_dir():
    d = os.environ.get("SYNFIRE_BP_MNIST", DEFAULT_MNIST)
    try:
        dataio._mnist_files(Path(d), "train")
        dataio._mnist_files(Path(d), "test")
    except FileNotFoundError:
        return None
    return d


@pytest.fixture(scope="session")
def mnist_path():
    d = mnist_dir()
    if d is None:
        pytest.skip("MNIST IDX files not found (set SYNFIRE_BP_MNIST)")
    return d


@pytest.fixture(scope="session")
def mnist10(mnist_path):
    return (dataio.load_mnist(mnist_path, "train", "10x10"),
            dataio.load_mnist(mnist_path, "test", "10x10"))


@pytest.fixture(scope="session")
def mnist20(mnist_path):
    return (dataio.load_mnist(mnist_path, "train", "20x20"),
            dataio.load_mnist(mnist_path, "test", "20x20"))


def write_idx(path, images=None, labels=None, gz=False):
    if images is not None:
        images = np.asarray(images, dtype=np.uint8)
        data = struct.pack(">IIII", 0x803, *images.shape) + images.tobytes()
    else:
        labels = np.asarray(labels, dtype=np.uint8)
        data = struct.pack(">II", 0x801, len(labels)) + labels.tobytes()
    path = Path(path)
    if gz:
        with gzip.open(path, "wb") as f:
            f.write(data)
    else:
        path.write_bytes(data)
    return path


@pytest.fixture
def synthetic_mnist(tmp_path):
    """Tiny MNIST-shaped IDX set: random strokes, labels cycling 0..9."""
    rng = np.random.default_rng(7)
    for prefix, n in (("train", 60), ("t10k", 20)):
        imgs = np.zeros((n, 28, 28), dtype=np.uint8)
        imgs[:, 4:24, 4:24] = (rng.random((n, 20, 20)) < 0.25) * 255
        write_idx(tmp_path / f"{prefix}-images-idx3-ubyte", images=imgs)
        write_idx(tmp_path / f"{prefix}-labels-idx1-ubyte", labels=np.arange(n) % 10)
    return tmp_path


# one PASS/FAIL line per acceptance criterion, printed at the end of the run
ACCEPTANCE_RESULTS: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        title, ok, detail = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n} [{'PASS' if ok else 'FAIL'}] {title}: {detail}")
