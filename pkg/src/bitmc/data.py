"""Data generation, ratings parsing, splits and the dataset text format.

Two synthetic ground-truth families are provided.  Both are low rank by
construction; observations are signs of the truth seen through an
optional noise channel at positions drawn uniformly (with replacement by
default, so duplicates can occur).

The on-disk dataset format is plain text: a header line ``m1 m2 n``
followed by n lines ``i j y`` with 1-based indices and y in {-1, 1}.
Round-tripping through it is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .model import Dataset

NOISE_KINDS = ("none", "switch", "logistic")


@dataclass(frozen=True)
class GroundTruth:
    """A known low-rank matrix together with its construction metadata."""

    matrix: np.ndarray
    rank: int
    kind: str

    @property
    def shape(self):
        return self.matrix.shape

    def clean_labels(self, rows, cols) -> np.ndarray:
        """Noise-free signs at the given positions (an exact 0 counts as +1)."""
        values = self.matrix[np.asarray(rows), np.asarray(cols)]
        return np.where(values >= 0.0, 1, -1).astype(np.int64)


@dataclass(frozen=True)
class NoiseSpec:
    """Observation channel applied to the clean signs.

    ``none`` passes signs through; ``switch`` flips each sign
    independently with probability ``flip_prob``; ``logistic`` draws
    +1 with probability sigmoid(M_ij) from the underlying real value.
    """

    kind: str = "none"
    flip_prob: float = 0.0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ConfigError(f"noise kind must be one of {NOISE_KINDS}, got {self.kind!r}")
        if self.kind == "switch":
            if not (0.0 <= self.flip_prob < 0.5):
                raise ConfigError(
                    f"flip probability must lie in [0, 0.5), got {self.flip_prob}"
                )
        elif self.flip_prob != 0.0:
            raise ConfigError(f"flip_prob is only meaningful for switch noise")


def gen_type_a(m1: int, m2: int, rank: int, seed, max_tries: int = 100) -> GroundTruth:
    """Sign matrix whose columns replicate a small independent set.

    The first ``rank`` columns are drawn i.i.d. uniform on {-1, +1}^m1
    and redrawn (up to ``max_tries`` times) until linearly independent;
    each remaining column is a uniformly chosen one of those, times a
    uniform sign.  Every entry is -1 or +1 and the rank is exact.
    """
    if not (1 <= rank <= min(m1, m2)):
        raise ConfigError(f"rank must lie in [1, min(m1, m2)], got {rank}")
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        base = rng.integers(0, 2, size=(m1, rank)) * 2 - 1
        if np.linalg.matrix_rank(base) == rank:
            break
    else:
        raise DataError(
            f"failed to draw {rank} independent sign columns in {max_tries} tries"
        )
    picks = rng.integers(0, rank, size=m2 - rank)
    signs = rng.integers(0, 2, size=m2 - rank) * 2 - 1
    rest = base[:, picks] * signs
    matrix = np.concatenate([base, rest], axis=1).astype(np.float64)
    return GroundTruth(matrix=matrix, rank=rank, kind="replicated-sign-columns")


def gen_type_b(m1: int, m2: int, rank: int, seed) -> GroundTruth:
    """Product of two i.i.d. standard Gaussian factors, U (m1 x r) V^T."""
    if not (1 <= rank <= min(m1, m2)):
        raise ConfigError(f"rank must lie in [1, min(m1, m2)], got {rank}")
    rng = np.random.default_rng(seed)
    left = rng.standard_normal((m1, rank))
    right = rng.standard_normal((m2, rank))
    return GroundTruth(matrix=left @ right.T, rank=rank, kind="gaussian-factors")


def default_sample_size(m1: int, m2: int, fraction: float = 0.2) -> int:
    """The default observation count: floor(fraction * m1 * m2)."""
    return int(math.floor(fraction * m1 * m2))


def sample_observations(
    truth: GroundTruth,
    noise: NoiseSpec,
    n: int,
    seed,
    with_replacement: bool = True,
):
    """Draw n observed entries of the truth through the noise channel.

    Positions are uniform over the grid, independently with replacement
    by default; ``with_replacement=False`` draws distinct positions
    instead.  Returns (dataset, clean_labels) where clean_labels are the
    noise-free signs at the same positions, for error-vs-truth metrics.
    """
    m1, m2 = truth.shape
    if n < 1:
        raise ConfigError(f"need at least one observation, got n={n}")
    rng = np.random.default_rng(seed)
    if with_replacement:
        rows = rng.integers(0, m1, size=n)
        cols = rng.integers(0, m2, size=n)
    else:
        if n > m1 * m2:
            raise ConfigError(
                f"cannot draw {n} distinct positions from a {m1} x {m2} grid"
            )
        flat = rng.choice(m1 * m2, size=n, replace=False)
        rows, cols = np.divmod(flat, m2)
    clean = truth.clean_labels(rows, cols)
    if noise.kind == "none":
        labels = clean
    elif noise.kind == "switch":
        flips = rng.random(n) < noise.flip_prob
        labels = np.where(flips, -clean, clean)
    else:
        values = truth.matrix[rows, cols]
        probs = 1.0 / (1.0 + np.exp(-values))
        labels = np.where(rng.random(n) < probs, 1, -1)
    return Dataset(m1, m2, rows, cols, labels), clean


def parse_movielens(path, rating_threshold: int = 4) -> Dataset:
    """Read a tab-separated ratings file (user, item, rating, timestamp).

    Ratings at or above ``rating_threshold`` become +1, the rest -1.
    Dimensions are the largest user and item ids seen (ids are 1-based
    in the file).
    """
    users, items, labels = [], [], []
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DataError(
                    f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}"
                )
            try:
                user, item, rating = int(parts[0]), int(parts[1]), int(parts[2])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: non-integer field ({exc})") from None
            if not (1 <= rating <= 5):
                raise DataError(f"{path}:{lineno}: rating {rating} outside 1..5")
            if user < 1 or item < 1:
                raise DataError(f"{path}:{lineno}: ids must be positive")
            users.append(user - 1)
            items.append(item - 1)
            labels.append(1 if rating >= rating_threshold else -1)
    if not users:
        raise DataError(f"{path}: no ratings found")
    return Dataset(max(users) + 1, max(items) + 1, users, items, labels)


def split(data: Dataset, train_count: int, seed):
    """Uniform split without replacement into (train, test) datasets."""
    if not (1 <= train_count < data.n):
        raise ConfigError(
            f"train_count must lie in [1, n), got {train_count} with n={data.n}"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(data.n)
    first, second = order[:train_count], order[train_count:]
    train = Dataset(
        data.m1, data.m2, data.rows[first], data.cols[first], data.labels[first]
    )
    test = Dataset(
        data.m1, data.m2, data.rows[second], data.cols[second], data.labels[second]
    )
    return train, test


def save_dataset(data: Dataset, path) -> None:
    """Write the text format: header ``m1 m2 n``, then 1-based ``i j y`` lines."""
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(f"{data.m1} {data.m2} {data.n}\n")
        for i, j, y in zip(data.rows, data.cols, data.labels):
            handle.write(f"{i + 1} {j + 1} {y}\n")


def load_dataset(path) -> Dataset:
    """Read the text format written by :func:`save_dataset`."""
    try:
        handle = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc}") from exc
    with handle:
        header = handle.readline().split()
        if len(header) != 3:
            raise DataError(f"{path}:1: header must be 'm1 m2 n'")
        try:
            m1, m2, n = (int(part) for part in header)
        except ValueError:
            raise DataError(f"{path}:1: header fields must be integers") from None
        rows, cols, labels = [], [], []
        for lineno, line in enumerate(handle, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected 'i j y'")
            try:
                i, j, y = (int(part) for part in parts)
            except ValueError:
                raise DataError(f"{path}:{lineno}: fields must be integers") from None
            if not (1 <= i <= m1) or not (1 <= j <= m2):
                raise DataError(f"{path}:{lineno}: index out of declared range")
            rows.append(i - 1)
            cols.append(j - 1)
            labels.append(y)
    if len(rows) != n:
        raise DataError(f"{path}: header declares {n} entries, found {len(rows)}")
    return Dataset(m1, m2, rows, cols, labels)
