"""MNIST IDX ingestion and deterministic train/test subsetting.

IDX is the big-endian container the MNIST distribution uses: a 4-byte magic
(0x00000803 for uint8 images, 0x00000801 for uint8 labels), one uint32 per
dimension, then raw bytes.  Files ending in ``.gz`` are decompressed
transparently.
"""
from __future__ import annotations

import gzip
import logging
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxError(ValueError):
    """Base class for malformed IDX input."""


class BadMagicError(IdxError):
    pass


class TruncatedFileError(IdxError):
    pass


class CountMismatchError(IdxError):
    pass


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # (N, 28, 28) uint8
    labels: np.ndarray  # (N,) uint8
    split: str = ""

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise CountMismatchError(
                f"{len(self.images)} images but {len(self.labels)} labels")
        if self.images.dtype != np.uint8 or self.labels.dtype != np.uint8:
            raise TypeError("images and labels must be uint8")
        if len(self.labels) and self.labels.max() > 9:
            raise ValueError("labels must lie in 0..9")
        self.images.setflags(write=False)
        self.labels.setflags(write=False)

    def __len__(self):
        return len(self.labels)

    def subset(self, idx, split: str) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.images[idx].copy(), self.labels[idx].copy(), split)


def _read_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def parse_idx(buf: bytes, magic: int, name: str = "<buffer>") -> np.ndarray:
    """Decode one IDX blob, checking magic and payload length."""
    if len(buf) < 4:
        raise TruncatedFileError(f"{name}: {len(buf)} bytes, too short for a header")
    (got,) = struct.unpack(">I", buf[:4])
    if got != magic:
        raise BadMagicError(f"{name}: magic 0x{got:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise TruncatedFileError(
            f"{name}: header needs {header} bytes, file has {len(buf)}")
    dims = struct.unpack(f">{ndim}I", buf[4:header])
    expected = header + int(np.prod(dims, dtype=np.int64))
    if len(buf) < expected:
        raise TruncatedFileError(
            f"{name}: expected {expected} bytes for dims {dims}, got {len(buf)}")
    if len(buf) > expected:
        raise IdxError(f"{name}: {len(buf) - expected} trailing bytes after payload")
    return np.frombuffer(buf, dtype=np.uint8, offset=header).reshape(dims).copy()


def load_idx(images_path, labels_path, split: str = "") -> Dataset:
    images = parse_idx(_read_bytes(images_path), IMAGES_MAGIC, str(images_path))
    labels = parse_idx(_read_bytes(labels_path), LABELS_MAGIC, str(labels_path))
    if images.shape[1:] != (28, 28):
        raise IdxError(f"{images_path}: image dims {images.shape[1:]}, expected (28, 28)")
    if len(images) != len(labels):
        raise CountMismatchError(
            f"{images_path} holds {len(images)} images, {labels_path} holds {len(labels)} labels")
    return Dataset(images, labels, split or Path(images_path).name)


def encode_idx(arr: np.ndarray, magic: int) -> bytes:
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    if arr.ndim != magic & 0xFF:
        raise ValueError(f"array has {arr.ndim} dims, magic 0x{magic:08x} wants {magic & 0xFF}")
    return struct.pack(f">I{arr.ndim}I", magic, *arr.shape) + arr.tobytes()


def write_idx(ds: Dataset, images_path, labels_path) -> None:
    for path, blob in ((images_path, encode_idx(ds.images, IMAGES_MAGIC)),
                       (labels_path, encode_idx(ds.labels, LABELS_MAGIC))):
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        if path.suffix == ".gz":
            # mtime=0 keeps the gzip header, and hence the file, reproducible
            with open(tmp, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as fh:
                fh.write(blob)
        else:
            tmp.write_bytes(blob)
        os.replace(tmp, path)


# -- portable shuffling -------------------------------------------------------
#
# Splits must be identical on every platform and numpy version, so the shuffle
# uses SplitMix64 (Steele, Lea & Flood 2014) driving a textbook Fisher-Yates:
# for i from n-1 down to 1, swap i with (next() mod (i+1)).

_MASK64 = (1 << 64) - 1


def splitmix64(seed: int):
    state = seed & _MASK64
    while True:
        state = (state + 0x9E3779B97F4A7C15) & _MASK64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        yield z ^ (z >> 31)


def portable_permutation(n: int, seed: int) -> np.ndarray:
    perm = list(range(n))
    gen = splitmix64(seed)
    for i in range(n - 1, 0, -1):
        j = next(gen) % (i + 1)
        perm[i], perm[j] = perm[j], perm[i]
    return np.asarray(perm, dtype=np.int64)


def take_split(ds: Dataset, n_train: int, n_test: int, seed: int):
    """Shuffle with ``seed`` and return (first n_train, next n_test)."""
    if n_train < 0 or n_test < 0:
        raise ValueError("split sizes must be non-negative")
    need = n_train + n_test
    if need > len(ds):
        raise InsufficientDataError(
            f"requested {n_train} train + {n_test} test patterns, dataset has {len(ds)}")
    if n_test > 0 and n_train >= len(ds):
        raise InsufficientDataError("no patterns remain for the test split")
    perm = portable_permutation(len(ds), seed)
    train = ds.subset(perm[:n_train], f"{ds.split}:train")
    test = ds.subset(perm[n_train:need], f"{ds.split}:test")
    log.info("train class counts %s", np.bincount(train.labels, minlength=10).tolist())
    log.info("test class counts %s", np.bincount(test.labels, minlength=10).tolist())
    return train, test
