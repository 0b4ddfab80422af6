"""Dense and event-driven linear algebra kernels shared by all recurrent cells.

Weight matrices are stored column-major so that gathering one column per
active input unit is a contiguous read.  Every kernel accumulates columns in
ascending index order; because skipped terms are exact zeros, the
event-driven product and the dense product over the same data are
bit-identical, which the test suite asserts rather than assumes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


def sigmoid(x):
    """Numerically stable logistic function, elementwise."""
    x = np.asarray(x)
    t = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + t), t / (1.0 + t))


def tanh(x):
    """Hyperbolic tangent, elementwise."""
    return np.tanh(x)


@dataclass
class MacCounter:
    """Tally of scalar multiplies actually executed by instrumented kernels."""

    n: int = 0

    def add(self, k):
        self.n += int(k)


@dataclass(frozen=True)
class EventVector:
    """Sparse activity vector: indices and values of the nonzero entries.

    This is the wire format between event-driven layers and timesteps.
    Indices are strictly ascending and stored values are never zero.
    """

    dim: int
    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        val = np.asarray(self.values)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)
        if idx.shape != val.shape or idx.ndim != 1:
            raise ShapeError("indices and values must be 1-d arrays of equal length")
        if idx.size:
            if idx[0] < 0 or idx[-1] >= self.dim:
                raise ShapeError(f"event index out of range for dim {self.dim}")
            if np.any(np.diff(idx) <= 0):
                raise ShapeError("event indices must be strictly ascending")
            if np.any(val == 0):
                raise ShapeError("event values must be nonzero")

    @classmethod
    def empty(cls, dim, dtype=np.float64):
        return cls(dim, np.empty(0, dtype=np.int64), np.empty(0, dtype=dtype))

    @property
    def n_active(self):
        return int(self.indices.size)

    @property
    def active(self):
        """The (index, value) pairs, ascending by index."""
        return list(zip(self.indices.tolist(), self.values.tolist()))


def to_event(v) -> EventVector:
    """Convert a dense vector to its event form (exact nonzeros only)."""
    v = np.asarray(v)
    if v.ndim != 1:
        raise ShapeError("to_event expects a 1-d vector")
    idx = np.flatnonzero(v)
    return EventVector(v.shape[0], idx.astype(np.int64), v[idx].copy())


def densify(e: EventVector) -> np.ndarray:
    """Materialize an event vector as a dense array with exact zeros."""
    out = np.zeros(e.dim, dtype=e.values.dtype if e.values.size else np.float64)
    out[e.indices] = e.values
    return out


class MaskedMatrix:
    """Weight matrix with a binary keep-mask; masked entries are exactly zero.

    `values` is column-major.  `nnz_per_column` is maintained whenever the
    mask changes and is the basis of per-column operation counting; the
    instrumented kernels count gathered entries independently of it.
    """

    __slots__ = ("values", "mask", "nnz_per_column", "_col_rows")

    def __init__(self, values, mask=None):
        values = np.asfortranarray(values)
        if values.ndim != 2:
            raise ShapeError("MaskedMatrix expects a 2-d array")
        if mask is None:
            mask = np.ones(values.shape, dtype=bool)
        else:
            mask = np.asfortranarray(np.asarray(mask, dtype=bool))
            if mask.shape != values.shape:
                raise ShapeError("mask shape must match values shape")
        self.values = values
        self.mask = mask
        self._col_rows = None
        self.apply_mask()

    @property
    def rows(self):
        return self.values.shape[0]

    @property
    def cols(self):
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self):
        return self.values.size

    @property
    def nnz(self):
        """Number of unmasked (kept) entries."""
        return int(self.nnz_per_column.sum())

    @property
    def weight_sparsity(self):
        return 1.0 - self.nnz / self.size

    @property
    def keep_fraction(self):
        return self.nnz / self.size

    def apply_mask(self):
        """Zero every masked entry; idempotent."""
        self.values[~self.mask] = 0
        self.nnz_per_column = self.mask.sum(axis=0).astype(np.int64)

    def mask_out_flat(self, flat_indices):
        """Mask out entries given by row-major flat indices."""
        self.mask.flat[np.asarray(flat_indices, dtype=np.int64)] = False
        self._col_rows = None
        self.apply_mask()

    def col_rows(self):
        """Per column, the row indices of kept entries (cached)."""
        if self._col_rows is None:
            self._col_rows = [np.flatnonzero(self.mask[:, j]) for j in range(self.cols)]
        return self._col_rows


def matvec_masked(w: MaskedMatrix, a, counter: MacCounter | None = None) -> np.ndarray:
    """W @ a for a dense activation vector, accumulated column by column.

    With a counter, only kept entries are gathered and each gathered entry
    counts as one multiply.
    """
    a = np.asarray(a)
    if a.shape != (w.cols,):
        raise ShapeError(f"expected vector of dim {w.cols}, got shape {a.shape}")
    out = np.zeros(w.rows, dtype=np.result_type(w.values, a))
    if counter is None:
        for j in range(w.cols):
            out += w.values[:, j] * a[j]
    else:
        col_rows = w.col_rows()
        for j in range(w.cols):
            rows = col_rows[j]
            out[rows] += w.values[rows, j] * a[j]
            counter.add(rows.size)
    return out


def matvec_event(w: MaskedMatrix, e: EventVector, counter: MacCounter | None = None) -> np.ndarray:
    """W @ densify(e), touching only the columns of active input units.

    Accumulation order (ascending active column index) matches
    `matvec_masked`, so the two are bit-identical on the same data.
    """
    if e.dim != w.cols:
        raise ShapeError(f"expected events of dim {w.cols}, got {e.dim}")
    out = np.zeros(w.rows, dtype=np.result_type(w.values, e.values if e.values.size else w.values))
    if counter is None:
        for j, v in zip(e.indices, e.values):
            out += w.values[:, j] * v
    else:
        col_rows = w.col_rows()
        for j, v in zip(e.indices, e.values):
            rows = col_rows[j]
            out[rows] += w.values[rows, j] * v
            counter.add(rows.size)
    return out
