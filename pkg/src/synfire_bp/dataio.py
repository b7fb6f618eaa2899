"""MNIST IDX ingestion and conversion to binary input vectors."""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
CROP = 4

GEOMETRIES = {"20x20": (20, 20), "10x10": (10, 10)}

CACHE_MAGIC = b"SGBPBITS"
CACHE_VERSION = 1


class IdxFormatError(ValueError):
    pass


@dataclass
class RawDataset:
    images: np.ndarray  # (n, rows, cols) uint8
    labels: np.ndarray  # (n,) uint8


@dataclass
class Dataset:
    images: np.ndarray  # (n, rows * cols) uint8 in {0, 1}
    labels: np.ndarray  # (n,) int64
    geometry: str
    split: str = "train"

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self):
        return len(self.labels)

    def subset(self, n: int | None) -> Dataset:
        if n is None or n >= len(self):
            return self
        return Dataset(self.images[:n], self.labels[:n], self.geometry, self.split)


def _read(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as f:
        return f.read()


def _parse_idx(data: bytes, expected_magic: int, ndim: int, path) -> np.ndarray:
    header = 4 + 4 * ndim
    if len(data) < 4:
        raise IdxFormatError(f"{path}: truncated at offset 0 (no magic number)")
    (magic,) = struct.unpack_from(">I", data, 0)
    if magic != expected_magic:
        raise IdxFormatError(
            f"{path}: bad magic 0x{magic:08x} at offset 0, expected 0x{expected_magic:08x}"
        )
    if len(data) < header:
        raise IdxFormatError(f"{path}: truncated header (need {header} bytes, got {len(data)})")
    dims = struct.unpack_from(f">{ndim}I", data, 4)
    count = int(np.prod(dims))
    if len(data) - header < count:
        raise IdxFormatError(
            f"{path}: truncated payload at offset {len(data)}: header announces {dims}, "
            f"{count} bytes needed after offset {header}"
        )
    if len(data) - header > count:
        raise IdxFormatError(
            f"{path}: {len(data) - header - count} trailing bytes after offset {header + count}"
        )
    return np.frombuffer(data, dtype=np.uint8, count=count, offset=header).reshape(dims)


def load_idx(images_path, labels_path) -> RawDataset:
    images = _parse_idx(_read(images_path), IMAGE_MAGIC, 3, images_path)
    labels = _parse_idx(_read(labels_path), LABEL_MAGIC, 1, labels_path)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(
            f"{images.shape[0]} images in {images_path} but {labels.shape[0]} labels in {labels_path}"
        )
    if images.shape[1:] != (28, 28):
        raise IdxFormatError(f"{images_path}: expected 28x28 images, got {images.shape[1:]}")
    if labels.size and labels.max() > 9:
        raise IdxFormatError(f"{labels_path}: label {labels.max()} outside 0..9")
    return RawDataset(images, labels)


def preprocess(raw: RawDataset, geometry: str = "20x20", split: str = "train") -> Dataset:
    """Crop the 4-pixel border and binarize at half intensity (pixel >= 128 counts as on).

    For ``10x10`` the cropped grayscale image is averaged over 2x2 blocks
    before binarizing.
    """
    if geometry not in GEOMETRIES:
        raise ValueError(f"geometry must be one of {sorted(GEOMETRIES)}")
    img = np.asarray(raw.images)[:, CROP:-CROP, CROP:-CROP].astype(np.int32)
    if geometry == "20x20":
        # p / 255 >= 0.5  <=>  2 p >= 255
        bits = 2 * img >= 255
    else:
        n = img.shape[0]
        block = img.reshape(n, 10, 2, 10, 2).sum(axis=(2, 4))
        # mean / 255 >= 0.5  <=>  2 * sum >= 4 * 255
        bits = 2 * block >= 4 * 255
    return Dataset(
        np.ascontiguousarray(bits.reshape(len(bits), -1), dtype=np.uint8),
        np.asarray(raw.labels, dtype=np.int64),
        geometry,
        split,
    )


def geometry_for(n_in: int) -> str:
    for name, (r, c) in GEOMETRIES.items():
        if r * c == n_in:
            return name
    raise ValueError(f"no MNIST geometry with {n_in} inputs (use 400 or 100)")


def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    """Deterministic permutation of ``range(n)`` for a given seed and epoch."""
    return np.random.default_rng([int(seed), int(epoch)]).permutation(n).astype(np.int64)


def find_mnist(data_dir=None) -> Path:
    """Directory holding the four official MNIST IDX files.

    Looks at ``data_dir``, then ``$SYNFIRE_BP_MNIST``.
    """
    d = data_dir or os.environ.get("SYNFIRE_BP_MNIST")
    if not d:
        raise FileNotFoundError("no MNIST directory given (set SYNFIRE_BP_MNIST or --data-dir)")
    return Path(d)


def _mnist_files(directory: Path, split: str):
    prefix = "train" if split == "train" else "t10k"
    out = []
    for kind in ("images-idx3", "labels-idx1"):
        for suffix in ("-ubyte", ".ubyte", "-ubyte.gz"):
            p = directory / f"{prefix}-{kind}{suffix}"
            if p.exists():
                out.append(p)
                break
        else:
            raise FileNotFoundError(f"missing {prefix}-{kind}-ubyte in {directory}")
    return out


def load_mnist(data_dir, split: str, geometry: str) -> Dataset:
    images, labels = _mnist_files(Path(data_dir), split)
    return preprocess(load_idx(images, labels), geometry, split)


# -- bit cache --------------------------------------------------------------------
#
# layout (little-endian):
#   8s  magic "SGBPBITS"
#   u16 version
#   u16 rows, u16 cols
#   u32 count
#   u8  split (0 train, 1 test)
#   count x u8             labels
#   count x ceil(rows*cols/8) bytes   image bits, row-major, MSB first

_CACHE_HEADER = struct.Struct("<8sHHHIB")


def save_bits_cache(ds: Dataset, path):
    rows, cols = GEOMETRIES[ds.geometry]
    packed = np.packbits(ds.images.astype(bool), axis=1)
    with open(path, "wb") as f:
        f.write(_CACHE_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, rows, cols, len(ds),
                                   0 if ds.split == "train" else 1))
        f.write(ds.labels.astype(np.uint8).tobytes())
        f.write(packed.tobytes())


def load_bits_cache(path) -> Dataset:
    data = Path(path).read_bytes()
    if len(data) < _CACHE_HEADER.size:
        raise IdxFormatError(f"{path}: truncated cache header")
    magic, version, rows, cols, count, split = _CACHE_HEADER.unpack_from(data, 0)
    if magic != CACHE_MAGIC:
        raise IdxFormatError(f"{path}: not a bit cache (magic {magic!r})")
    if version != CACHE_VERSION:
        raise IdxFormatError(f"{path}: cache version {version}, expected {CACHE_VERSION}")
    geometry = f"{rows}x{cols}"
    row_bytes = (rows * cols + 7) // 8
    off = _CACHE_HEADER.size
    if len(data) != off + count + count * row_bytes:
        raise IdxFormatError(f"{path}: size does not match header")
    labels = np.frombuffer(data, np.uint8, count, off).astype(np.int64)
    packed = np.frombuffer(data, np.uint8, count * row_bytes, off + count).reshape(count, row_bytes)
    images = np.unpackbits(packed, axis=1, count=rows * cols)
    return Dataset(np.ascontiguousarray(images), labels, geometry, "train" if split == 0 else "test")
