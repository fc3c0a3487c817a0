# lattice_sternberg/multilinear.py
"""
k-linear maps with decay. A map of arity k is a tensor of shape (N,)*(k+1),
axis 0 the output and axes 1..k the input slots: a dense array while N^(k+1)
fits LS_DENSE_LIMIT, a coordinate-format SparseTensor of the blocks above
LS_BLOCK_CUTOFF beyond it.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence, Tuple, Union

import numpy as np

from lattice_sternberg import settings
from lattice_sternberg.decay import LatticeWindow, _Profile
from lattice_sternberg.errors import ArityMismatch, SlotOutOfRange, TooLarge, WindowMismatch
from lattice_sternberg.lattice import (
    BlockLinearMap,
    LatticeVector,
    Number,
    _check_same_window,
    _decay_ratio,
    _dense_entries,
    block_norms,
    dense_fits,
    from_block_array,
    pair_decay,
)
from lattice_sternberg.sparse import (
    SparseTensor,
    apply_vectors,
    block_norm_entries,
    coalesce,
    concat,
    contract_vector,
    group_rows,
    group_sum,
    left_multiply,
    prune,
    substitute,
)

logger = logging.getLogger("lattice_sternberg.multilinear")

MAX_ARITY = 6

Tensor = Union[np.ndarray, SparseTensor]


def check_arity(arity: int) -> None:
    if arity > MAX_ARITY:
        raise TooLarge(f"arity {arity} exceeds {MAX_ARITY}", {"arity": arity})


@dataclass(frozen=True, eq=False)
class MultiLinearMap:
    window: LatticeWindow
    tensor: Tensor
    symmetric: bool = False

    def __post_init__(self):
        t = self.tensor if isinstance(self.tensor, SparseTensor) else np.asarray(self.tensor)
        if len(t.shape) < 2 or any(d != self.window.dim for d in t.shape):
            raise WindowMismatch(f"tensor of shape {t.shape} does not fit window dim {self.window.dim}")
        arity = len(t.shape) - 1
        check_arity(arity)
        if dense_fits(self.window, arity):
            t = t.todense() if isinstance(t, SparseTensor) else t
        else:
            if not isinstance(t, SparseTensor):
                t = SparseTensor.from_dense(t)
            t = prune(t, self.window.node_dim_n)
        object.__setattr__(self, "tensor", t)

    @property
    def arity(self) -> int:
        return self.tensor.ndim - 1

    @property
    def is_sparse(self) -> bool:
        return isinstance(self.tensor, SparseTensor)

    @property
    def dtype(self) -> np.dtype:
        return self.tensor.dtype

    def sparse(self) -> SparseTensor:
        return self.tensor if self.is_sparse else SparseTensor.from_dense(self.tensor)

    def dense(self) -> np.ndarray:
        return self.tensor.todense() if self.is_sparse else self.tensor

    def is_zero(self) -> bool:
        return not np.any(self.tensor.data if self.is_sparse else self.tensor)

    # ---- constructors ----
    @classmethod
    def zeros(cls, window: LatticeWindow, arity: int) -> "MultiLinearMap":
        check_arity(arity)
        if dense_fits(window, arity):
            return cls(window, np.zeros((window.dim,) * (arity + 1)), symmetric=True)
        return cls(window, SparseTensor.empty(window.dim, arity + 1), symmetric=True)

    @classmethod
    def from_linear(cls, A: BlockLinearMap) -> "MultiLinearMap":
        return cls(A.window, SparseTensor.from_scipy(A.matrix) if A.is_sparse else A.matrix)

    @classmethod
    def from_profile(cls, window: LatticeWindow, profile: np.ndarray, block, arity: int) -> "MultiLinearMap":
        """W_{i; j..j} = profile[i, j] * block, block of shape (n,)*(arity+1) or n x n^arity."""
        check_arity(arity)
        s, n = window.size, window.node_dim_n
        block = np.asarray(block, dtype=float).reshape((n,) * (arity + 1))
        profile = np.asarray(profile)
        symmetric = _is_slot_symmetric(block)
        if dense_fits(window, arity):
            blocks = np.zeros((s,) * (arity + 1) + (n,) * (arity + 1), dtype=block.dtype)
            rows, cols = np.meshgrid(np.arange(s), np.arange(s), indexing="ij")
            expand = (Ellipsis,) + (None,) * (arity + 1)
            blocks[(rows,) + (cols,) * arity] = profile[expand] * block
            return cls(window, from_block_array(blocks, window), symmetric=symmetric)
        rows, cols = np.nonzero(np.abs(profile) * np.abs(block).max(initial=0.0) >= settings.BLOCK_CUTOFF)
        local = np.argwhere(block)
        coords = np.empty((rows.size, local.shape[0], arity + 1), dtype=np.int64)
        coords[..., 0] = rows[:, None] * n + local[None, :, 0]
        coords[..., 1:] = cols[:, None, None] * n + local[None, :, 1:]
        data = profile[rows, cols][:, None] * block[tuple(local.T)][None, :]
        tensor = SparseTensor(window.dim, coords.reshape(-1, arity + 1), data.reshape(-1))
        return cls(window, tensor, symmetric=symmetric)

    @classmethod
    def diagonal(cls, window: LatticeWindow, block, arity: int) -> "MultiLinearMap":
        """Node-local map W_{i; i..i} = block."""
        return cls.from_profile(window, np.eye(window.size), block, arity)

    def to_linear(self) -> BlockLinearMap:
        if self.arity != 1:
            raise ArityMismatch(f"arity {self.arity} map is not linear")
        return BlockLinearMap(self.window, self.tensor.to_scipy() if self.is_sparse else self.tensor)

    # ---- cached norms ----
    @cached_property
    def stored_block_norms(self) -> Tuple[np.ndarray, np.ndarray]:
        """Node keys (b, k+1) of the nonzero blocks and their norms."""
        if self.is_sparse:
            return block_norm_entries(self.tensor, self.window.node_dim_n)
        return _dense_entries(block_norms(self.tensor, self.window))

    @cached_property
    def op_norm_bound(self) -> float:
        keys, norms = self.stored_block_norms
        if not norms.size:
            return 0.0
        return float(np.bincount(keys[:, 0], weights=norms, minlength=self.window.size).max())

    # ---- algebra ----
    def __add__(self, other: "MultiLinearMap") -> "MultiLinearMap":
        _check_same_window(self.window, other.window)
        if self.arity != other.arity:
            raise ArityMismatch(f"cannot add arities {self.arity} and {other.arity}")
        if self.is_sparse or other.is_sparse:
            tensor = coalesce(concat([self.sparse(), other.sparse()]))
        else:
            tensor = self.tensor + other.tensor
        return MultiLinearMap(self.window, tensor, self.symmetric and other.symmetric)

    def __sub__(self, other: "MultiLinearMap") -> "MultiLinearMap":
        return self + (-other)

    def __mul__(self, c: Number) -> "MultiLinearMap":
        tensor = self.tensor.scaled(c) if self.is_sparse else self.tensor * c
        return MultiLinearMap(self.window, tensor, self.symmetric)

    __rmul__ = __mul__

    def __neg__(self) -> "MultiLinearMap":
        return self * -1.0

    def max_abs(self) -> float:
        if self.is_sparse:
            return self.tensor.abs_max()
        return float(np.abs(self.tensor).max(initial=0.0))


def _is_slot_symmetric(block: np.ndarray) -> bool:
    k = block.ndim - 1
    return all(
        np.array_equal(block, block.transpose((0,) + tuple(p + 1 for p in perm)))
        for perm in itertools.permutations(range(k))
    )


# -------- norms --------
def ml_op_norm(W: MultiLinearMap) -> float:
    return W.op_norm_bound


def ml_gamma(W: MultiLinearMap, gamma_fn: _Profile) -> float:
    """max over slots p of sup_{i, j_p} Gamma(i - j_p)^-1 sum_{other j} ||W_{i; j}||."""
    keys, norms = W.stored_block_norms
    best = 0.0
    for p in range(1, W.arity + 1):
        pairs, pair_of = group_rows(keys[:, [0, p]])
        sums = group_sum(norms, pair_of, pairs.shape[0])
        decay = pair_decay(gamma_fn, W.window, pairs[:, 0], pairs[:, 1])
        best = max(best, _decay_ratio(sums, decay))
    return best


def ml_gamma_norm(W: MultiLinearMap, gamma_fn: _Profile) -> float:
    return max(ml_op_norm(W), ml_gamma(W, gamma_fn))


def symmetrize(W: MultiLinearMap) -> MultiLinearMap:
    k = W.arity
    if k == 1:
        return MultiLinearMap(W.window, W.tensor, symmetric=True)
    perms = [(0,) + perm for perm in itertools.permutations(range(1, k + 1))]
    if W.is_sparse:
        tensor = coalesce(concat([W.tensor.transpose(perm) for perm in perms]))
        return MultiLinearMap(W.window, tensor.scaled(1.0 / math.factorial(k)), symmetric=True)
    total = np.zeros_like(W.tensor)
    for perm in perms:
        total = total + W.tensor.transpose(perm)
    return MultiLinearMap(W.window, total / math.factorial(k), symmetric=True)


# -------- contraction and evaluation --------
def contract(W: MultiLinearMap, slots: Sequence[int], vectors: Sequence[LatticeVector]) -> MultiLinearMap:
    """Fix input slots (1-based) to the given vectors; the result keeps the remaining slots in order."""
    if len(slots) != len(vectors):
        raise ArityMismatch(f"{len(slots)} slots but {len(vectors)} vectors")
    if len(set(slots)) != len(slots) or any(p < 1 or p > W.arity for p in slots):
        raise SlotOutOfRange(f"slots {list(slots)} invalid for arity {W.arity}")
    if len(slots) > W.arity - 1:
        raise SlotOutOfRange(f"contracting all {W.arity} slots leaves no map; use apply")
    tensor = W.tensor
    for p, v in sorted(zip(slots, vectors), key=lambda pv: -pv[0]):
        _check_same_window(W.window, v.window)
        if isinstance(tensor, SparseTensor):
            tensor = contract_vector(tensor, p, v.values)
        else:
            tensor = np.tensordot(tensor, v.values, axes=([p], [0]))
    return MultiLinearMap(W.window, tensor, W.symmetric)


def apply(W: MultiLinearMap, vectors: Sequence[LatticeVector]) -> LatticeVector:
    if len(vectors) != W.arity:
        raise ArityMismatch(f"arity {W.arity} map applied to {len(vectors)} vectors")
    for v in vectors:
        _check_same_window(W.window, v.window)
    if W.is_sparse:
        return LatticeVector(W.window, apply_vectors(W.tensor, [v.values for v in vectors]))
    out = W.tensor
    for v in reversed(vectors):
        out = out @ v.values
    return LatticeVector(W.window, out)


# -------- composition --------
def compose_multi(A: MultiLinearMap, Bs: Sequence[MultiLinearMap]) -> MultiLinearMap:
    """(A B_1 ... B_k)(u) = A(B_1(u^1), ..., B_k(u^k)), arity l_1 + ... + l_k."""
    if len(Bs) != A.arity:
        raise ArityMismatch(f"arity {A.arity} map composed with {len(Bs)} maps")
    for B in Bs:
        _check_same_window(A.window, B.window)
    total = sum(B.arity for B in Bs)
    check_arity(total)
    if not dense_fits(A.window, total):
        tensor = A.sparse()
        for q in range(A.arity, 0, -1):
            tensor = prune(substitute(tensor, q, Bs[q - 1].sparse()), A.window.node_dim_n)
        return MultiLinearMap(A.window, tensor)
    operands = [A.dense(), list(range(A.arity + 1))]
    label = A.arity + 1
    out = [0]
    for q, B in enumerate(Bs, start=1):
        fresh = list(range(label, label + B.arity))
        operands += [B.dense(), [q] + fresh]
        out += fresh
        label += B.arity
    tensor = np.einsum(*operands, out, optimize=True)
    return MultiLinearMap(A.window, tensor)


def left_compose(B: BlockLinearMap, W: MultiLinearMap) -> MultiLinearMap:
    """L_B(W) = B W."""
    _check_same_window(B.window, W.window)
    if W.is_sparse:
        tensor = left_multiply(MultiLinearMap.from_linear(B).sparse(), W.tensor)
    else:
        tensor = np.tensordot(B.dense(), W.tensor, axes=([1], [0]))
    return MultiLinearMap(W.window, tensor, W.symmetric)


def right_compose(W: MultiLinearMap, A: BlockLinearMap, slot: int) -> MultiLinearMap:
    """R_{slot,A}(W)(u) = W(u_1, ..., A u_slot, ..., u_k)."""
    if slot < 1 or slot > W.arity:
        raise SlotOutOfRange(f"slot {slot} invalid for arity {W.arity}")
    _check_same_window(A.window, W.window)
    if W.is_sparse:
        return MultiLinearMap(W.window, substitute(W.tensor, slot, MultiLinearMap.from_linear(A).sparse()))
    moved = np.tensordot(W.tensor, A.dense(), axes=([slot], [0]))
    return MultiLinearMap(W.window, np.moveaxis(moved, -1, slot))
