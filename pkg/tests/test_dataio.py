import hashlib
import struct

import numpy as np
import pytest

from conftest import write_idx
from synfire_bp import dataio
from synfire_bp.dataio import IdxFormatError


def _pair(tmp_path, images, labels, gz=False):
    sfx = ".gz" if gz else ""
    return (write_idx(tmp_path / f"img{sfx}", images=images, gz=gz),
            write_idx(tmp_path / f"lab{sfx}", labels=labels, gz=gz))


@pytest.mark.parametrize("gz", [False, True])
def test_load_idx_roundtrip(tmp_path, gz):
    rng = np.random.default_rng(0)
    imgs = rng.integers(0, 256, (7, 28, 28), dtype=np.uint8)
    raw = dataio.load_idx(*_pair(tmp_path, imgs, np.arange(7) % 10, gz))
    np.testing.assert_array_equal(raw.images, imgs)
    assert raw.labels.tolist() == list(range(7))


def test_bad_magic_names_offset(tmp_path):
    img, lab = _pair(tmp_path, np.zeros((1, 28, 28)), [0])
    data = bytearray(img.read_bytes())
    data[3] = 0x01
    img.write_bytes(bytes(data))
    with pytest.raises(IdxFormatError, match="offset 0"):
        dataio.load_idx(img, lab)


def test_truncated_payload(tmp_path):
    img, lab = _pair(tmp_path, np.zeros((2, 28, 28)), [0, 1])
    img.write_bytes(img.read_bytes()[:-5])
    with pytest.raises(IdxFormatError, match="truncated"):
        dataio.load_idx(img, lab)


def test_truncated_header(tmp_path):
    img, lab = _pair(tmp_path, np.zeros((1, 28, 28)), [0])
    img.write_bytes(struct.pack(">II", 0x803, 1))
    with pytest.raises(IdxFormatError, match="header"):
        dataio.load_idx(img, lab)


def test_count_mismatch(tmp_path):
    img, lab = _pair(tmp_path, np.zeros((2, 28, 28)), [0])
    with pytest.raises(IdxFormatError, match="2 images"):
        dataio.load_idx(img, lab)


def test_wrong_image_size(tmp_path):
    img, lab = _pair(tmp_path, np.zeros((1, 20, 20)), [0])
    with pytest.raises(IdxFormatError, match="28x28"):
        dataio.load_idx(img, lab)


def test_binarize_edge():
    imgs = np.zeros((1, 28, 28), dtype=np.uint8)
    imgs[0, 4, 4] = 127
    imgs[0, 4, 5] = 128
    ds = dataio.preprocess(dataio.RawDataset(imgs, np.array([3])), "20x20")
    assert ds.images.shape == (1, 400)
    assert ds.images[0, 0] == 0 and ds.images[0, 1] == 1


def test_crop_map():
    rng = np.random.default_rng(1)
    imgs = rng.integers(0, 256, (3, 28, 28), dtype=np.uint8)
    ds = dataio.preprocess(dataio.RawDataset(imgs, np.zeros(3)), "20x20")
    for r in range(20):
        for c in range(20):
            assert (ds.images[:, r * 20 + c] == (imgs[:, r + 4, c + 4] >= 128)).all()


def test_downsample_averages_then_binarizes():
    imgs = np.zeros((1, 28, 28), dtype=np.uint8)
    # block (0, 0): mean exactly 127.5 -> on; block (0, 1): mean 127.25 -> off
    imgs[0, 4:6, 4:6] = [[255, 0], [255, 0]]
    imgs[0, 4:6, 6:8] = [[255, 0], [254, 0]]
    # binarize-first would give 2 of 4 pixels on for both blocks
    ds = dataio.preprocess(dataio.RawDataset(imgs, np.zeros(1)), "10x10")
    assert ds.images.shape == (1, 100)
    assert ds.images[0, :2].tolist() == [1, 0]


def test_geometry_for():
    assert dataio.geometry_for(400) == "20x20" and dataio.geometry_for(100) == "10x10"
    with pytest.raises(ValueError):
        dataio.geometry_for(784)


def test_epoch_order():
    a = dataio.epoch_order(5, 0, 5)
    assert sorted(a.tolist()) == list(range(5))
    np.testing.assert_array_equal(a, dataio.epoch_order(5, 0, 5))
    orders = {tuple(dataio.epoch_order(5, e, 1000)) for e in range(20)}
    assert len(orders) == 20
    assert dataio.epoch_order(5, 0, 1).tolist() == [0]


def test_bits_cache_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    ds = dataio.Dataset(rng.integers(0, 2, (13, 100), dtype=np.uint8), rng.integers(0, 10, 13), "10x10", "test")
    dataio.save_bits_cache(ds, tmp_path / "c.bin")
    back = dataio.load_bits_cache(tmp_path / "c.bin")
    np.testing.assert_array_equal(back.images, ds.images)
    np.testing.assert_array_equal(back.labels, ds.labels)
    assert (back.geometry, back.split) == ("10x10", "test")
    (tmp_path / "bad.bin").write_bytes(b"nonsense" * 4)
    with pytest.raises(IdxFormatError):
        dataio.load_bits_cache(tmp_path / "bad.bin")


def test_find_mnist_requires_a_location(monkeypatch):
    monkeypatch.delenv("SYNFIRE_BP_MNIST", raising=False)
    with pytest.raises(FileNotFoundError):
        dataio.find_mnist(None)


@pytest.mark.mnist
def test_official_mnist(mnist_path):
    train = dataio.load_mnist(mnist_path, "train", "20x20")
    test = dataio.load_mnist(mnist_path, "test", "20x20")
    assert (len(train), len(test)) == (60000, 10000)
    assert 90 <= test.images.sum(axis=1).mean() <= 110
    # preprocessing is deterministic
    digest = hashlib.sha256(test.images.tobytes()).hexdigest()
    again = dataio.load_mnist(mnist_path, "test", "20x20")
    assert hashlib.sha256(again.images.tobytes()).hexdigest() == digest
