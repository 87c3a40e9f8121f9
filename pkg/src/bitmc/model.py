"""Core data types and empirical risks for 1-bit matrix completion.

Observations are triples (i, j, y) with y in {-1, +1}: the sign of a
noisy low-rank matrix seen at position (i, j).  Indices are 0-based
everywhere in memory; the text file format (see :mod:`bitmc.data`) is
1-based and conversion happens only at the I/O boundary.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sparse

from .errors import ConfigError, DataError

PRIOR_FAMILIES = ("gamma", "inv-gamma")


@dataclass(frozen=True)
class ObservedEntry:
    """A single observed entry: ``label`` at position (``row``, ``col``)."""

    row: int
    col: int
    label: int

    def __post_init__(self):
        if self.label not in (-1, 1):
            raise DataError(f"label must be -1 or +1, got {self.label!r}")
        if self.row < 0 or self.col < 0:
            raise DataError(f"negative index in entry ({self.row}, {self.col})")


class Dataset:
    """An immutable collection of observed binary entries of an m1 x m2 matrix.

    Stores the observations in columnar form (``rows``, ``cols``,
    ``labels``, all length n) and exposes per-row / per-column index
    lists used by the coordinate updates.  Duplicate positions are
    allowed: sampling of observation positions is with replacement by
    default.

    Parameters
    ----------
    m1, m2 : int
        Matrix dimensions.
    rows, cols : array_like of int
        0-based row/column index of each observation.
    labels : array_like of int
        Observed signs, each -1 or +1.
    """

    def __init__(self, m1: int, m2: int, rows, cols, labels):
        if m1 <= 0 or m2 <= 0:
            raise DataError(f"matrix dimensions must be positive, got {m1} x {m2}")
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        labels = np.asarray(labels, dtype=np.int64)
        if not (rows.shape == cols.shape == labels.shape) or rows.ndim != 1:
            raise DataError("rows, cols and labels must be 1-d arrays of equal length")
        if rows.size == 0:
            raise DataError("dataset must contain at least one observation")
        if rows.min() < 0 or rows.max() >= m1:
            raise DataError("row index out of range [0, m1)")
        if cols.min() < 0 or cols.max() >= m2:
            raise DataError("column index out of range [0, m2)")
        bad = np.abs(labels) != 1
        if bad.any():
            pos = int(np.argmax(bad))
            raise DataError(f"label at observation {pos} is {labels[pos]}, expected -1 or +1")
        for arr in (rows, cols, labels):
            arr.setflags(write=False)
        self.m1 = int(m1)
        self.m2 = int(m2)
        self.rows = rows
        self.cols = cols
        self.labels = labels

    @property
    def n(self) -> int:
        """Number of observations (duplicates counted)."""
        return self.rows.size

    @classmethod
    def from_entries(cls, m1: int, m2: int, entries) -> "Dataset":
        entries = list(entries)
        return cls(
            m1,
            m2,
            [e.row for e in entries],
            [e.col for e in entries],
            [e.label for e in entries],
        )

    def entry(self, pos: int) -> ObservedEntry:
        return ObservedEntry(int(self.rows[pos]), int(self.cols[pos]), int(self.labels[pos]))

    def __len__(self) -> int:
        return self.n

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.m1 == other.m1
            and self.m2 == other.m2
            and np.array_equal(self.rows, other.rows)
            and np.array_equal(self.cols, other.cols)
            and np.array_equal(self.labels, other.labels)
        )

    @cached_property
    def signed_labels(self) -> np.ndarray:
        """Labels as a float array (for arithmetic)."""
        return self.labels.astype(np.float64)

    @cached_property
    def row_incidence(self) -> sparse.csr_matrix:
        """Sparse (m1, n) matrix whose row i selects the observations in row i.

        Multiplying it by an (n, k) array accumulates per-row sums over
        the observation sets Omega_{i,.}.
        """
        data = np.ones(self.n)
        return sparse.csr_matrix(
            (data, (self.rows, np.arange(self.n))), shape=(self.m1, self.n)
        )

    @cached_property
    def col_incidence(self) -> sparse.csr_matrix:
        """Sparse (m2, n) matrix accumulating per-column sums (see row_incidence)."""
        data = np.ones(self.n)
        return sparse.csr_matrix(
            (data, (self.cols, np.arange(self.n))), shape=(self.m2, self.n)
        )

    @cached_property
    def row_index(self) -> list:
        """row_index[i] = positions of the observations with row index i."""
        order = np.argsort(self.rows, kind="stable")
        counts = np.bincount(self.rows, minlength=self.m1)
        return np.split(order, np.cumsum(counts)[:-1])

    @cached_property
    def col_index(self) -> list:
        order = np.argsort(self.cols, kind="stable")
        counts = np.bincount(self.cols, minlength=self.m2)
        return np.split(order, np.cumsum(counts)[:-1])


class PredictorMatrix:
    """A real m1 x m2 matrix, stored dense or as a low-rank factor pair.

    With a factor pair (L, R) the matrix is L @ R.T and entry lookups
    never materialise the full product, which matters for large grids.
    """

    def __init__(self, values=None, factors=None):
        if (values is None) == (factors is None):
            raise ConfigError("exactly one of values or factors is required")
        if values is not None:
            values = np.asarray(values, dtype=np.float64)
            if values.ndim != 2:
                raise ConfigError("values must be a 2-d array")
            self._values = values
            self._factors = None
            self.shape = values.shape
        else:
            left, right = factors
            left = np.asarray(left, dtype=np.float64)
            right = np.asarray(right, dtype=np.float64)
            if left.ndim != 2 or right.ndim != 2 or left.shape[1] != right.shape[1]:
                raise ConfigError("factors must be (m1, k) and (m2, k) arrays")
            self._values = None
            self._factors = (left, right)
            self.shape = (left.shape[0], right.shape[0])

    @classmethod
    def from_factors(cls, left, right) -> "PredictorMatrix":
        return cls(factors=(left, right))

    def at(self, rows, cols) -> np.ndarray:
        """Values at the given positions (vectorised)."""
        rows = np.asarray(rows)
        cols = np.asarray(cols)
        if self._values is not None:
            return self._values[rows, cols]
        left, right = self._factors
        return np.einsum("nk,nk->n", left[rows], right[cols])

    def full(self) -> np.ndarray:
        if self._values is not None:
            return self._values
        left, right = self._factors
        return left @ right.T


def _as_predictor(matrix) -> PredictorMatrix:
    if isinstance(matrix, PredictorMatrix):
        return matrix
    return PredictorMatrix(values=matrix)


def _margins(matrix, data: Dataset) -> np.ndarray:
    pred = _as_predictor(matrix)
    if pred.shape != (data.m1, data.m2):
        raise DataError(
            f"predictor shape {pred.shape} does not match dataset {(data.m1, data.m2)}"
        )
    return data.signed_labels * pred.at(data.rows, data.cols)


def zero_one_risk(matrix, data: Dataset) -> float:
    """Fraction of observations whose sign the matrix gets wrong.

    An entry with value exactly 0 predicts +1 (ties break positive), so
    it is counted as an error exactly when the label is -1.
    """
    pred = _as_predictor(matrix)
    if pred.shape != (data.m1, data.m2):
        raise DataError(
            f"predictor shape {pred.shape} does not match dataset {(data.m1, data.m2)}"
        )
    predicted = np.where(pred.at(data.rows, data.cols) >= 0.0, 1, -1)
    return float(np.mean(predicted != data.labels))


def hinge_risk(matrix, data: Dataset) -> float:
    """Mean hinge loss max(0, 1 - y * M[i, j]) over the observations."""
    return float(np.mean(np.maximum(0.0, 1.0 - _margins(matrix, data))))


def logistic_risk(matrix, data: Dataset) -> float:
    """Mean logistic loss log(1 + exp(-y * M[i, j])), computed stably."""
    return float(np.mean(np.logaddexp(0.0, -_margins(matrix, data))))


def predict_labels(left, right, rows, cols) -> np.ndarray:
    """Signs of (L @ R.T)[rows, cols]; an exact 0 predicts +1."""
    values = PredictorMatrix.from_factors(left, right).at(rows, cols)
    return np.where(values >= 0.0, 1, -1).astype(np.int64)


@dataclass(frozen=True)
class PriorConfig:
    """Prior over the factor matrices.

    Given positive column scales gamma_1..gamma_k, factor entries are
    independent N(0, gamma_k); each scale follows the chosen hyperprior
    (``gamma``: Gamma(alpha, beta) with rate beta, or ``inv-gamma``:
    InverseGamma(alpha, beta) with scale beta).
    """

    family: str
    alpha: float
    beta: float
    k: int

    def __post_init__(self):
        if self.family not in PRIOR_FAMILIES:
            raise ConfigError(
                f"prior family must be one of {PRIOR_FAMILIES}, got {self.family!r}"
            )
        if not (self.alpha > 0 and np.isfinite(self.alpha)):
            raise ConfigError(f"alpha must be positive and finite, got {self.alpha}")
        if not (self.beta > 0 and np.isfinite(self.beta)):
            raise ConfigError(f"beta must be positive and finite, got {self.beta}")
        if self.k < 1:
            raise ConfigError(f"k must be a positive integer, got {self.k}")
