"""Length buckets and the two mini-batch rules: random (RS) and length-aware (LAS)."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError

RS = "RS"
LAS = "LAS"


@dataclass(frozen=True, eq=False)
class LengthBuckets:
    """Quantile partition of dataset indices by trajectory length.

    Bucket ``k`` holds every index whose length lies in
    ``[boundaries[k], boundaries[k + 1])``.
    """

    buckets: tuple[np.ndarray, ...]
    boundaries: np.ndarray
    weights: np.ndarray

    @property
    def k(self) -> int:
        return len(self.buckets)

    def sizes(self) -> np.ndarray:
        return np.array([len(b) for b in self.buckets], dtype=np.int64)

    def bucket_of_length(self, length: int) -> int:
        k = int(np.searchsorted(self.boundaries, length, side="right")) - 1
        return min(max(k, 0), self.k - 1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["bucket", "lower", "upper", "size", "weight"])
        for k, members in enumerate(self.buckets):
            writer.writerow([k, int(self.boundaries[k]), int(self.boundaries[k + 1]), len(members),
                             repr(float(self.weights[k]))])
        return buf.getvalue()


def build_buckets(lengths, k: int, uniform_weights: bool = False) -> LengthBuckets:
    """Partition indices into at most ``k`` length buckets at the empirical k-quantiles.

    Equal lengths always land in the lower bucket; cut points that would leave a
    bucket empty are dropped, so fewer than ``k`` buckets may come back.
    ``lengths`` may be a sequence of ints or anything with a ``lengths()`` method.
    """
    if k < 1:
        raise ConfigError(f"k_buckets must be >= 1, got {k}")
    if hasattr(lengths, "lengths"):
        lengths = lengths.lengths()
    lengths = np.asarray(lengths, dtype=np.int64)
    n = len(lengths)
    if n == 0:
        raise ConfigError("cannot bucket an empty dataset")
    ordered = np.sort(lengths)
    cuts = []
    for q in range(1, k):
        c = int(ordered[-(-q * n // k) - 1])  # lower q/k quantile: ordered[ceil(q n / k) - 1]
        if c < ordered[-1] and (not cuts or c > cuts[-1]):
            cuts.append(c)
    # bucket q holds lengths in (cuts[q-1], cuts[q]]; as half-open integer ranges:
    boundaries = np.array([int(ordered[0])] + [c + 1 for c in cuts] + [int(ordered[-1]) + 1],
                          dtype=np.int64)
    assign = np.searchsorted(boundaries, lengths, side="right") - 1
    buckets = tuple(np.flatnonzero(assign == b) for b in range(len(boundaries) - 1))
    sizes = np.array([len(b) for b in buckets], dtype=np.float64)
    if uniform_weights:
        weights = np.full(len(buckets), 1.0 / len(buckets))
    else:
        weights = sizes / n
    return LengthBuckets(buckets, boundaries, weights)


@dataclass(frozen=True)
class SamplerConfig:
    strategy: str = LAS
    k_buckets: int = 10
    batch_size: int = 128
    seed: int = 0
    uniform_weights: bool = False

    def __post_init__(self):
        if self.strategy not in (RS, LAS):
            raise ConfigError(f"sampler.strategy must be RS or LAS, got {self.strategy!r}")
        if self.k_buckets < 1:
            raise ConfigError("sampler.k_buckets must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("sampler.batch_size must be >= 1")


@dataclass(frozen=True, eq=False)
class Batch:
    indices: np.ndarray
    bucket: int | None = None


def sample_batch_las(buckets: LengthBuckets, m: int, rng: np.random.Generator) -> Batch:
    k = int(rng.choice(buckets.k, p=buckets.weights)) if buckets.k > 1 else 0
    members = buckets.buckets[k]
    if len(members) < m:
        picks = rng.integers(0, len(members), size=m)
    else:
        picks = rng.choice(len(members), size=m, replace=False)
    return Batch(members[picks], bucket=k)


def sample_batch_rs(n: int, m: int, rng: np.random.Generator) -> Batch:
    if hasattr(n, "__len__"):
        n = len(n)
    if n < 1:
        raise ConfigError("cannot sample from an empty dataset")
    return Batch(rng.integers(0, n, size=m), bucket=None)


class BatchSampler:
    """Seeded stream of RS or LAS batches over one dataset.

    Owns its own generator; not meant to be shared between workers.
    """

    def __init__(self, lengths: Sequence[int], config: SamplerConfig):
        if hasattr(lengths, "lengths"):
            lengths = lengths.lengths()
        self.lengths = np.asarray(lengths, dtype=np.int64)
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        self.buckets = (
            build_buckets(self.lengths, config.k_buckets, config.uniform_weights)
            if config.strategy == LAS
            else None
        )

    def __len__(self):
        return len(self.lengths)

    def next_batch(self) -> Batch:
        if self.buckets is not None:
            return sample_batch_las(self.buckets, self.config.batch_size, self.rng)
        return sample_batch_rs(len(self.lengths), self.config.batch_size, self.rng)

    def __iter__(self):
        while True:
            yield self.next_batch()
