# lattice_sternberg/sparse.py
"""
Coordinate (COO) storage for maps too large for a dense array.

A SparseTensor of order d holds integer coordinates of shape (nnz, d) over the
flat lattice index and one value per coordinate row. Block helpers group rows
by node (coordinate // n). Stored maps keep only blocks whose norm reaches the
block cutoff.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.sparse

from lattice_sternberg import settings
from lattice_sternberg.errors import ArityMismatch, WindowMismatch

logger = logging.getLogger("lattice_sternberg.sparse")


@dataclass(frozen=True, eq=False)
class SparseTensor:
    dim: int
    coords: np.ndarray
    data: np.ndarray

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.int64)
        data = np.asarray(self.data)
        if coords.ndim != 2 or data.ndim != 1 or coords.shape[0] != data.shape[0]:
            raise WindowMismatch(f"coordinates {coords.shape} do not match values {data.shape}")
        if coords.size and (coords.min() < 0 or coords.max() >= self.dim):
            raise WindowMismatch(f"coordinates outside [0, {self.dim})")
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "data", data)

    @property
    def ndim(self) -> int:
        return self.coords.shape[1]

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.dim,) * self.ndim

    @property
    def nnz(self) -> int:
        return self.data.shape[0]

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    # ---- conversions ----
    @classmethod
    def empty(cls, dim: int, ndim: int, dtype=float) -> "SparseTensor":
        return cls(dim, np.zeros((0, ndim), dtype=np.int64), np.zeros(0, dtype=dtype))

    @classmethod
    def from_dense(cls, tensor: np.ndarray) -> "SparseTensor":
        tensor = np.asarray(tensor)
        idx = np.nonzero(tensor)
        return cls(tensor.shape[0], np.stack(idx, axis=1), tensor[idx])

    @classmethod
    def from_scipy(cls, matrix) -> "SparseTensor":
        coo = scipy.sparse.coo_matrix(matrix)
        coo.sum_duplicates()
        return cls(coo.shape[0], np.stack([coo.row, coo.col], axis=1), coo.data)

    def to_scipy(self) -> scipy.sparse.csr_matrix:
        if self.ndim != 2:
            raise ArityMismatch(f"order {self.ndim} tensor is not a matrix")
        return scipy.sparse.csr_matrix((self.data, (self.coords[:, 0], self.coords[:, 1])), shape=self.shape)

    def todense(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=self.dtype)
        np.add.at(out, tuple(self.coords.T), self.data)
        return out

    # ---- elementwise ----
    def abs_max(self) -> float:
        return float(np.abs(self.data).max(initial=0.0))

    def scaled(self, c) -> "SparseTensor":
        return SparseTensor(self.dim, self.coords, self.data * c)

    def transpose(self, perm: Sequence[int]) -> "SparseTensor":
        return SparseTensor(self.dim, self.coords[:, list(perm)], self.data)


# -------- grouping --------
def group_rows(keys: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Distinct rows of a 2-d key array (sorted) and the group index of every row."""
    if keys.shape[0] == 0:
        return keys.copy(), np.zeros(0, dtype=np.int64)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    return uniq, inverse.reshape(-1)


def group_sum(values: np.ndarray, inverse: np.ndarray, size: int) -> np.ndarray:
    if np.iscomplexobj(values):
        return (np.bincount(inverse, weights=values.real, minlength=size)
                + 1j * np.bincount(inverse, weights=values.imag, minlength=size))
    return np.bincount(inverse, weights=values, minlength=size)


def group_max(values: np.ndarray, inverse: np.ndarray, size: int) -> np.ndarray:
    out = np.zeros(size)
    np.maximum.at(out, inverse, values)
    return out


def coalesce(T: SparseTensor) -> SparseTensor:
    """Sum duplicate coordinates and drop exact zeros."""
    keys, inverse = group_rows(T.coords)
    data = group_sum(T.data, inverse, keys.shape[0])
    live = data != 0
    return SparseTensor(T.dim, keys[live], data[live])


def concat(tensors: Sequence[SparseTensor]) -> SparseTensor:
    first = tensors[0]
    return SparseTensor(
        first.dim,
        np.concatenate([T.coords for T in tensors], axis=0),
        np.concatenate([T.data for T in tensors]),
    )


# -------- products --------
def _join(left: np.ndarray, right: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Index pairs (a, b) with left[a] == right[b]."""
    order = np.argsort(right, kind="stable")
    ordered = right[order]
    lo = np.searchsorted(ordered, left, side="left")
    counts = np.searchsorted(ordered, left, side="right") - lo
    a = np.repeat(np.arange(left.size), counts)
    starts = np.repeat(lo - (np.cumsum(counts) - counts), counts)
    b = order[starts + np.arange(a.size)]
    return a, b


def substitute(T: SparseTensor, slot: int, B: SparseTensor) -> SparseTensor:
    """Replace input axis `slot` of T by the input axes of B: T(.., B(..), ..)."""
    a, b = _join(T.coords[:, slot], B.coords[:, 0])
    coords = np.concatenate([T.coords[a, :slot], B.coords[b, 1:], T.coords[a, slot + 1:]], axis=1)
    return coalesce(SparseTensor(T.dim, coords, T.data[a] * B.data[b]))


def left_multiply(B: SparseTensor, T: SparseTensor) -> SparseTensor:
    """B . T on the output axis, B a matrix."""
    a, b = _join(T.coords[:, 0], B.coords[:, 1])
    coords = np.concatenate([B.coords[b, :1], T.coords[a, 1:]], axis=1)
    return coalesce(SparseTensor(T.dim, coords, B.data[b] * T.data[a]))


def contract_vector(T: SparseTensor, slot: int, v: np.ndarray) -> SparseTensor:
    data = T.data * v[T.coords[:, slot]]
    return coalesce(SparseTensor(T.dim, np.delete(T.coords, slot, axis=1), data))


def apply_vectors(T: SparseTensor, vectors: Sequence[np.ndarray]) -> np.ndarray:
    weights = T.data
    for p, v in enumerate(vectors, start=1):
        weights = weights * v[T.coords[:, p]]
    return group_sum(weights, T.coords[:, 0], T.dim)


# -------- blocks --------
def _node_groups(T: SparseTensor, n: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    keys, inverse = group_rows(T.coords // n)
    return keys, inverse, T.coords % n


def block_arrays(T: SparseTensor, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Node keys (b, d) of the stored blocks and the blocks themselves, shape (b,) + (n,)*d."""
    keys, inverse, comp = _node_groups(T, n)
    blocks = np.zeros((keys.shape[0],) + (n,) * T.ndim, dtype=T.dtype)
    np.add.at(blocks, (inverse,) + tuple(comp.T), T.data)
    return keys, blocks


def from_block_arrays(dim: int, n: int, keys: np.ndarray, blocks: np.ndarray) -> SparseTensor:
    idx = np.nonzero(blocks)
    coords = keys[idx[0]] * n + np.stack(idx[1:], axis=1)
    return SparseTensor(dim, coords, blocks[idx])


def _block_norms(T: SparseTensor, n: int, node_norm: str) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    keys, inverse, comp = _node_groups(T, n)
    size = keys.shape[0]
    a = np.abs(T.data)
    if node_norm == "sup":
        rows, row_of = group_rows(np.column_stack([inverse, comp[:, 0]]))
        return keys, inverse, group_max(group_sum(a, row_of, rows.shape[0]), rows[:, 0], size)
    if node_norm == "l1":
        cols, col_of = group_rows(np.column_stack([inverse, comp[:, 1:]]))
        return keys, inverse, group_max(group_sum(a, col_of, cols.shape[0]), cols[:, 0], size)
    if node_norm == "l2":
        if T.ndim == 2:
            _, blocks = block_arrays(T, n)
            norms = np.linalg.norm(blocks, ord=2, axis=(1, 2)) if size else np.zeros(0)
            return keys, inverse, norms
        return keys, inverse, np.sqrt(group_sum(a * a, inverse, size))
    raise ValueError(f"unknown node norm {node_norm!r}")


def block_norm_entries(T: SparseTensor, n: int, node_norm: str = settings.NODE_NORM) -> Tuple[np.ndarray, np.ndarray]:
    """Node keys of the stored blocks and their norms, same conventions as the dense block table."""
    keys, _, norms = _block_norms(T, n, node_norm)
    return keys, norms


def prune(T: SparseTensor, n: int, cutoff: Optional[float] = None) -> SparseTensor:
    """Drop blocks whose norm is below cutoff (default LS_BLOCK_CUTOFF), and exact zeros."""
    if T.nnz == 0:
        return T
    cutoff = settings.BLOCK_CUTOFF if cutoff is None else cutoff
    _, inverse, norms = _block_norms(T, n, settings.NODE_NORM)
    keep = (norms[inverse] >= cutoff) & (T.data != 0)
    if keep.all():
        return T
    logger.debug("pruned %d of %d stored entries below block cutoff %.1e", int((~keep).sum()), T.nnz, cutoff)
    return SparseTensor(T.dim, T.coords[keep], T.data[keep])


def prune_matrix(matrix, n: int, cutoff: Optional[float] = None) -> scipy.sparse.csr_matrix:
    T = SparseTensor.from_scipy(matrix)
    pruned = prune(T, n, cutoff)
    return pruned.to_scipy()

