"""Synthetic classification data and non-IID client partitioning.

The pool is a Gaussian mixture: one mean per class, drawn once from a seeded
spread, unit covariance around it. Clients receive Dirichlet-skewed slices of
the pool without replacement, so smaller concentration values produce more
severe label heterogeneity.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .learner import Minibatch

FILE_MAGIC = b"FHDS"
FILE_VERSION = 1


class PoolExhausted(RuntimeError):
    """Raised when the pool cannot cover the requested partition."""


@dataclass
class Dataset:
    """Immutable-by-convention sample store."""

    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self) -> None:
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.inputs) != len(self.labels) or len(self.labels) == 0:
            raise ValueError("inputs and labels must be non-empty and aligned")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ValueError("labels outside [0, num_classes)")

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, indices: np.ndarray) -> "Dataset":
        return Dataset(self.inputs[indices], self.labels[indices], self.num_classes)


@dataclass(frozen=True)
class PartitionSpec:
    """How to split a pool across clients."""

    alpha: float
    clients: int
    samples_per_client: int

    def __post_init__(self) -> None:
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.clients < 1 or self.samples_per_client < 1:
            raise ValueError("clients and samples_per_client must be positive")


def generate_pool(
    num_classes: int,
    dim: int,
    per_class: int,
    spread: float,
    rng: np.random.Generator,
) -> Dataset:
    """Gaussian-mixture pool with per_class samples for each class, in class order."""
    if num_classes < 2:
        raise ValueError(f"need at least 2 classes, got {num_classes}")
    means = rng.normal(0.0, spread, size=(num_classes, dim))
    inputs = np.concatenate(
        [means[c] + rng.normal(0.0, 1.0, size=(per_class, dim)) for c in range(num_classes)]
    )
    labels = np.repeat(np.arange(num_classes), per_class)
    return Dataset(inputs, labels, num_classes)


def _largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    """Integer allocation of `total` proportional to weights, ties by index."""
    target = weights * total / weights.sum()
    alloc = np.floor(target).astype(int)
    remainder = total - alloc.sum()
    if remainder > 0:
        order = np.argsort(-(target - alloc), kind="stable")
        alloc[order[:remainder]] += 1
    return alloc


def dirichlet_partition(
    pool: Dataset, spec: PartitionSpec, rng: np.random.Generator
) -> list[Dataset]:
    """Per-client Dirichlet class proportions, sampled from the pool without replacement.

    When a class runs out mid-partition, the shortfall is redistributed over
    classes that still have stock, proportionally to the remaining stock, so
    every client ends with exactly samples_per_client items.
    """
    need = spec.clients * spec.samples_per_client
    if need > pool.n:
        raise PoolExhausted(f"pool holds {pool.n} samples, partition needs {need}")
    c = pool.num_classes
    by_class = [rng.permutation(np.flatnonzero(pool.labels == k)) for k in range(c)]
    cursor = np.zeros(c, dtype=int)
    stock = np.array([len(ix) for ix in by_class])

    clients = []
    for _ in range(spec.clients):
        proportions = rng.dirichlet(np.full(c, spec.alpha))
        want = _largest_remainder(proportions, spec.samples_per_client)
        take = np.minimum(want, stock)
        while (short := spec.samples_per_client - take.sum()) > 0:
            open_stock = stock - take
            if open_stock.sum() == 0:
                raise PoolExhausted("pool exhausted while redistributing a shortfall")
            extra = _largest_remainder(
                np.where(open_stock > 0, open_stock, 0).astype(float), short
            )
            extra = np.minimum(extra, open_stock)
            if extra.sum() == 0:
                extra[np.argmax(open_stock)] = 1
            take += extra
        picked = np.concatenate(
            [by_class[k][cursor[k] : cursor[k] + take[k]] for k in range(c)]
        )
        cursor += take
        stock -= take
        clients.append(pool.subset(picked))
    return clients


def split_pool(pool: Dataset, holdout_per_class: int) -> tuple[Dataset, Dataset]:
    """Carve a class-balanced holdout off a pool, keeping the rest for clients.

    Takes the last holdout_per_class samples of every class, so train and
    holdout share the generating mixture but never a sample.
    """
    if holdout_per_class < 1:
        raise ValueError("holdout_per_class must be positive")
    train_idx, hold_idx = [], []
    for c in range(pool.num_classes):
        members = np.flatnonzero(pool.labels == c)
        if len(members) <= holdout_per_class:
            raise ValueError(
                f"class {c} has {len(members)} samples, holdout wants {holdout_per_class}"
            )
        train_idx.append(members[:-holdout_per_class])
        hold_idx.append(members[-holdout_per_class:])
    return pool.subset(np.concatenate(train_idx)), pool.subset(np.concatenate(hold_idx))


class BatchStream:
    """Without-replacement sweep over one client's data, reshuffled per sweep.

    Batches are always full-size; when fewer than batch_size samples remain in
    the current permutation the stream reshuffles and starts a fresh sweep
    (no tail is ever emitted, and no tail exists when batch_size divides n).
    """

    def __init__(self, data: Dataset, batch_size: int, rng: np.random.Generator) -> None:
        if batch_size < 1 or batch_size > data.n:
            raise ValueError(f"batch size {batch_size} invalid for {data.n} samples")
        self.data = data
        self.batch_size = batch_size
        self._rng = rng
        self._perm = rng.permutation(data.n)
        self._pos = 0

    def next_batch(self) -> Minibatch:
        if self._pos + self.batch_size > self.data.n:
            self._perm = self._rng.permutation(self.data.n)
            self._pos = 0
        picked = self._perm[self._pos : self._pos + self.batch_size]
        self._pos += self.batch_size
        return Minibatch(self.data.inputs[picked], self.data.labels[picked])


def save_dataset(data: Dataset, path: str) -> None:
    """Write the on-disk format: little-endian header then raw arrays.

    Layout: magic "FHDS" (4 bytes), version u32, n u32, d_in u32, num_classes
    u32, then n*d_in float32 inputs row-major, then n int32 labels.
    """
    header = struct.pack(
        "<4sIIII", FILE_MAGIC, FILE_VERSION, data.n, data.dim, data.num_classes
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data.inputs.astype("<f4").tobytes(order="C"))
        fh.write(data.labels.astype("<i4").tobytes())


def load_dataset(path: str) -> Dataset:
    with open(path, "rb") as fh:
        raw = fh.read()
    head = struct.calcsize("<4sIIII")
    magic, version, n, dim, num_classes = struct.unpack("<4sIIII", raw[:head])
    if magic != FILE_MAGIC:
        raise ValueError(f"bad magic {magic!r}, not a dataset file")
    if version != FILE_VERSION:
        raise ValueError(f"unsupported dataset file version {version}")
    body = raw[head:]
    need = n * dim * 4 + n * 4
    if len(body) != need:
        raise ValueError(f"dataset body holds {len(body)} bytes, expected {need}")
    inputs = np.frombuffer(body[: n * dim * 4], dtype="<f4").reshape(n, dim)
    labels = np.frombuffer(body[n * dim * 4 :], dtype="<i4")
    return Dataset(inputs.astype(np.float64), labels.astype(np.int64), num_classes)
