"""Synthetic feature datasets, the FVDS file format, and Dirichlet sharding."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"FVDS"
FORMAT_VERSION = 1


class FormatError(ValueError):
    """Raised on a malformed dataset file; message carries the byte offset."""


@dataclass
class FeatureDataset:
    """Labeled feature vectors, already extracted (no images here)."""

    features: np.ndarray  # [n, d] float32
    labels: np.ndarray  # [n] int
    n_classes: int
    split: str = "train"

    def __post_init__(self):
        if len(self.features) != len(self.labels):
            raise ValueError("features/labels length mismatch")
        if len(self.features) >= 1 and (self.labels.min() < 0
                                        or self.labels.max() >= self.n_classes):
            raise ValueError("label out of range")

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass
class ClientShard:
    """One site's local sample: indices into the train set, with replacement."""

    client_id: int
    indices: np.ndarray  # [samples_per_client] int
    class_histogram: np.ndarray  # [k] int


def generate_synthetic(k: int, d: int, n_train_per_class: int, n_test_per_class: int,
                       separation: float, rng: np.random.Generator
                       ) -> tuple[FeatureDataset, FeatureDataset]:
    """Gaussian blobs: class c ~ Normal(separation * u_c, I), u_c a random unit vector.

    Train and test are drawn independently; everything is a pure function of
    the generator state.
    """
    if min(k, d, n_train_per_class, n_test_per_class) < 1:
        raise ValueError("all counts must be >= 1")
    if separation < 0:
        raise ValueError("separation must be >= 0")
    dirs = rng.normal(size=(k, d))
    norms = np.linalg.norm(dirs, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    centroids = separation * dirs / norms

    def draw(per_class: int, split: str) -> FeatureDataset:
        feats = np.empty((k * per_class, d), dtype=np.float32)
        labels = np.empty(k * per_class, dtype=np.int64)
        for c in range(k):
            lo = c * per_class
            feats[lo:lo + per_class] = (centroids[c]
                                        + rng.normal(size=(per_class, d))).astype(np.float32)
            labels[lo:lo + per_class] = c
        return FeatureDataset(feats, labels, n_classes=k, split=split)

    return draw(n_train_per_class, "train"), draw(n_test_per_class, "test")


def dirichlet_sample(alpha: float, k: int, rng: np.random.Generator) -> np.ndarray:
    """Symmetric Dirichlet(alpha) draw via normalized Gamma(alpha, 1) variates."""
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    if k < 1:
        raise ValueError("k must be >= 1")
    while True:
        g = rng.gamma(alpha, 1.0, size=k)
        total = g.sum()
        if total > 0:
            return g / total
        # extreme alpha can underflow every coordinate to zero; redraw


def build_client_shards(train: FeatureDataset, n_clients: int, alpha: float,
                        master_seed: int, samples_per_client: int = 500
                        ) -> list[ClientShard]:
    """Per-client Dirichlet class distributions realized as categorical draws.

    Each of the `samples_per_client` draws picks a class from the client's
    distribution and then a uniform with-replacement index within that class.
    A drawn class with no training examples is redrawn from the renormalized
    distribution over non-empty classes.
    """
    from .rng import substream

    k = train.n_classes
    by_class = [np.flatnonzero(train.labels == c) for c in range(k)]
    nonempty = np.array([len(ix) > 0 for ix in by_class])
    if not nonempty.any():
        raise ValueError("train set is empty")
    shards = []
    for cid in range(n_clients):
        rng = substream(master_seed, "partition", cid)
        probs = dirichlet_sample(alpha, k, rng)
        masked = probs * nonempty
        if masked.sum() == 0:
            # the drawn distribution lives entirely on empty classes
            masked = nonempty.astype(float)
        masked = masked / masked.sum()
        classes = rng.choice(k, size=samples_per_client, p=probs)
        # redraw any class that has no training samples
        bad = ~nonempty[classes]
        if bad.any():
            classes[bad] = rng.choice(k, size=int(bad.sum()), p=masked)
        indices = np.empty(samples_per_client, dtype=np.int64)
        for i, c in enumerate(classes):
            pool = by_class[c]
            indices[i] = pool[rng.integers(len(pool))]
        hist = np.bincount(classes, minlength=k)
        shards.append(ClientShard(cid, indices, hist))
    return shards


def save_dataset(ds: FeatureDataset, path: str) -> None:
    """Write the little-endian FVDS format: magic, version, n, d, k, floats, labels."""
    feats = np.ascontiguousarray(ds.features, dtype="<f4")
    labels = np.ascontiguousarray(ds.labels, dtype="<u4")
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<III", FORMAT_VERSION, ds.n, ds.dim))
        f.write(struct.pack("<I", ds.n_classes))
        f.write(feats.tobytes())
        f.write(labels.tobytes())
    os.replace(tmp, path)


def load_dataset(path: str, split: str = "train") -> FeatureDataset:
    """Read an FVDS file; malformed input raises FormatError with the byte offset."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != MAGIC:
        raise FormatError(f"bad magic at byte 0: expected {MAGIC!r}, got {raw[:4]!r}")
    if len(raw) < 20:
        raise FormatError(f"truncated header at byte {len(raw)}")
    version, n, d, k = struct.unpack_from("<IIII", raw, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version} at byte 4")
    offset = 20
    feat_bytes = n * d * 4
    if len(raw) < offset + feat_bytes:
        raise FormatError(f"truncated feature block at byte {len(raw)}")
    feats = np.frombuffer(raw, dtype="<f4", count=n * d, offset=offset).reshape(n, d)
    offset += feat_bytes
    if len(raw) < offset + n * 4:
        raise FormatError(f"truncated label block at byte {len(raw)}")
    labels = np.frombuffer(raw, dtype="<u4", count=n, offset=offset)
    if len(raw) != offset + n * 4:
        raise FormatError(f"trailing bytes at byte {offset + n * 4}")
    return FeatureDataset(feats.astype(np.float32), labels.astype(np.int64),
                          n_classes=k, split=split)
