# lattice_sternberg/lattice.py
"""
Block linear maps on truncated lattices with Gamma-norms.

Storage is a (s*n, s*n) matrix with node-major, component-minor indexing
(flat index = node * n + component): a dense array while dim^2 fits
LS_DENSE_LIMIT, a scipy CSR matrix holding the blocks above LS_BLOCK_CUTOFF
beyond it. Blocks outside the window are absent, i.e. composition is
zero-padded.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse

from lattice_sternberg import settings
from lattice_sternberg.decay import LatticeWindow, _Profile
from lattice_sternberg.errors import (
    NoConvergence,
    NotInvertible,
    PreconditionViolated,
    WindowMismatch,
)
from lattice_sternberg.sparse import SparseTensor, block_norm_entries, prune_matrix

logger = logging.getLogger("lattice_sternberg.lattice")

Number = Union[int, float, complex]
Matrix = Union[np.ndarray, scipy.sparse.csr_matrix]
NODE_NORMS = ("sup", "l1", "l2")


def dense_fits(window: LatticeWindow, arity: int = 1) -> bool:
    """Whether a map of this arity on the window is stored densely."""
    return window.dim ** (arity + 1) <= settings.DENSE_LIMIT


# -------- norm helpers --------
def vector_norm(values: np.ndarray, node_norm: str = settings.NODE_NORM) -> np.ndarray:
    """R^n norm along the last axis."""
    a = np.abs(values)
    if node_norm == "sup":
        return a.max(axis=-1)
    if node_norm == "l1":
        return a.sum(axis=-1)
    if node_norm == "l2":
        return np.sqrt((a * a).sum(axis=-1))
    raise ValueError(f"unknown node norm {node_norm!r}")


def to_blocks(tensor: np.ndarray, window: LatticeWindow) -> np.ndarray:
    """Flat (N,)*(k+1) tensor -> node axes first, component axes last."""
    k1 = tensor.ndim
    s, n = window.size, window.node_dim_n
    split = tensor.reshape((s, n) * k1)
    return split.transpose(tuple(range(0, 2 * k1, 2)) + tuple(range(1, 2 * k1, 2)))


def from_block_array(blocks: np.ndarray, window: LatticeWindow) -> np.ndarray:
    """Inverse of to_blocks."""
    k1 = blocks.ndim // 2
    order = tuple(ax for pair in zip(range(k1), range(k1, 2 * k1)) for ax in pair)
    return blocks.transpose(order).reshape((window.dim,) * k1)


def block_norms(tensor: np.ndarray, window: LatticeWindow, node_norm: str = settings.NODE_NORM) -> np.ndarray:
    """
    Norm of every block (i; j_1..j_k) of a k-linear map, shape (s,)*(k+1).

    sup: max over output rows of the absolute row sum (exact for k=1)
    l1:  max over input tuples of the absolute column sum (exact for k=1)
    l2:  spectral norm for k=1, Frobenius bound for k>1
    """
    k = tensor.ndim - 1
    blocks = to_blocks(tensor, window)
    out_axis = k + 1
    in_axes = tuple(range(k + 2, 2 * k + 2))
    if node_norm == "sup":
        return np.abs(blocks).sum(axis=in_axes).max(axis=out_axis)
    if node_norm == "l1":
        summed = np.abs(blocks).sum(axis=out_axis)
        return summed.max(axis=tuple(range(k + 1, 2 * k + 1)))
    if node_norm == "l2":
        if k == 1:
            return np.linalg.norm(blocks, ord=2, axis=(2, 3))
        a = np.abs(blocks)
        return np.sqrt((a * a).sum(axis=(out_axis,) + in_axes))
    raise ValueError(f"unknown node norm {node_norm!r}")


def norm_mode(window: LatticeWindow) -> str:
    return "exact" if window.node_dim_n == 1 else "block_sum_bound"


def _check_same_window(a: LatticeWindow, b: LatticeWindow) -> None:
    if a != b:
        raise WindowMismatch(f"window mismatch: {a.dict()} vs {b.dict()}")

def pair_decay(gamma_fn: _Profile, window: LatticeWindow, i: np.ndarray, j: np.ndarray) -> np.ndarray:
    """Gamma(i - j) for arrays of node indices."""
    if window.dim_m != gamma_fn.dim_m:
        raise WindowMismatch(f"window dim {window.dim_m} != decay dim {gamma_fn.dim_m}")
    offs = window.offsets
    return np.asarray(gamma_fn.evaluate(offs[i] - offs[j]), dtype=float).reshape(-1)


def _decay_ratio(norms: np.ndarray, decay: np.ndarray) -> float:
    """max norm / Gamma over nonzero blocks; a nonzero block where Gamma vanishes gives inf."""
    live = norms > 0
    if not np.any(live):
        return 0.0
    if np.any(decay[live] <= 0):
        return float("inf")
    return float((norms[live] / decay[live]).max())


def _dense_entries(table: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    keys = np.argwhere(table > 0)
    return keys, table[tuple(keys.T)]


def _pair(a: Matrix, b: Matrix) -> Tuple[Matrix, Matrix]:
    if scipy.sparse.issparse(a) != scipy.sparse.issparse(b):
        return scipy.sparse.csr_matrix(a), scipy.sparse.csr_matrix(b)
    return a, b



# -------- vectors --------
@dataclass(frozen=True, eq=False)
class LatticeVector:
    window: LatticeWindow
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values)
        if vals.shape != (self.window.dim,):
            raise WindowMismatch(f"vector of shape {vals.shape} does not fit window dim {self.window.dim}")
        object.__setattr__(self, "values", vals)

    @classmethod
    def zeros(cls, window: LatticeWindow, dtype=float) -> "LatticeVector":
        return cls(window, np.zeros(window.dim, dtype=dtype))

    @classmethod
    def from_nodes(cls, window: LatticeWindow, nodes: np.ndarray) -> "LatticeVector":
        return cls(window, np.asarray(nodes).reshape(window.dim))

    @classmethod
    def emb(cls, window: LatticeWindow, i: int, u: Sequence[Number]) -> "LatticeVector":
        u = np.asarray(u)
        vals = np.zeros(window.dim, dtype=np.result_type(u.dtype, float))
        n = window.node_dim_n
        vals[i * n:(i + 1) * n] = u
        return cls(window, vals)

    @property
    def nodes(self) -> np.ndarray:
        return self.values.reshape(self.window.size, self.window.node_dim_n)

    def proj(self, i: int) -> np.ndarray:
        return self.nodes[i].copy()

    def norm(self, node_norm: str = settings.NODE_NORM) -> float:
        if self.window.dim == 0:
            return 0.0
        return float(vector_norm(self.nodes, node_norm).max())

    def __add__(self, other: "LatticeVector") -> "LatticeVector":
        _check_same_window(self.window, other.window)
        return LatticeVector(self.window, self.values + other.values)

    def __sub__(self, other: "LatticeVector") -> "LatticeVector":
        _check_same_window(self.window, other.window)
        return LatticeVector(self.window, self.values - other.values)

    def __mul__(self, c: Number) -> "LatticeVector":
        return LatticeVector(self.window, self.values * c)

    __rmul__ = __mul__

    def __neg__(self) -> "LatticeVector":
        return LatticeVector(self.window, -self.values)




# -------- linear maps --------
@dataclass(frozen=True, eq=False)
class BlockLinearMap:
    window: LatticeWindow
    matrix: Matrix

    def __post_init__(self):
        mat = self.matrix
        dim = self.window.dim
        if tuple(np.shape(mat)) != (dim, dim):
            raise WindowMismatch(f"matrix of shape {np.shape(mat)} does not fit window dim {dim}")
        if dense_fits(self.window):
            mat = mat.toarray() if scipy.sparse.issparse(mat) else np.asarray(mat)
        else:
            mat = prune_matrix(mat, self.window.node_dim_n)
        object.__setattr__(self, "matrix", mat)

    # ---- constructors ----
    @classmethod
    def identity(cls, window: LatticeWindow) -> "BlockLinearMap":
        if dense_fits(window):
            return cls(window, np.eye(window.dim))
        return cls(window, scipy.sparse.identity(window.dim, format="csr"))

    @classmethod
    def zeros(cls, window: LatticeWindow) -> "BlockLinearMap":
        if dense_fits(window):
            return cls(window, np.zeros((window.dim, window.dim)))
        return cls(window, scipy.sparse.csr_matrix((window.dim, window.dim)))

    @classmethod
    def uncoupled(cls, window: LatticeWindow, block) -> "BlockLinearMap":
        block = np.atleast_2d(np.asarray(block))
        if dense_fits(window):
            return cls(window, np.kron(np.eye(window.size), block))
        return cls(window, scipy.sparse.kron(scipy.sparse.identity(window.size), block, format="csr"))

    @classmethod
    def from_profile(cls, window: LatticeWindow, profile, block=None) -> "BlockLinearMap":
        """A_ij = profile[i, j] * block (block defaults to the n x n identity); profile may be sparse."""
        block = np.eye(window.node_dim_n) if block is None else np.atleast_2d(np.asarray(block))
        if dense_fits(window):
            profile = profile.toarray() if scipy.sparse.issparse(profile) else np.asarray(profile)
            return cls(window, np.kron(profile, block))
        profile = scipy.sparse.csr_matrix(profile)
        profile.data[np.abs(profile.data) * np.abs(block).max(initial=0.0) < settings.BLOCK_CUTOFF] = 0.0
        profile.eliminate_zeros()
        return cls(window, scipy.sparse.kron(profile, block, format="csr"))

    @classmethod
    def coupled(
        cls,
        window: LatticeWindow,
        block,
        gamma_fn: _Profile,
        strength: float,
        coupling_block=None,
    ) -> "BlockLinearMap":
        """Uncoupled block plus strength * Gamma(i-j) couplings off the diagonal."""
        profile = strength * np.array(gamma_fn.matrix(window))
        np.fill_diagonal(profile, 0.0)
        return cls.uncoupled(window, block) + cls.from_profile(window, profile, coupling_block)

    @classmethod
    def shift(cls, window: LatticeWindow, axis: int = 0, step: int = 1) -> "BlockLinearMap":
        """(Sx)_i = x_{i + step e_axis}, zero where the neighbour leaves the window."""
        offs = window.offsets
        target = offs.copy()
        target[:, axis] += step
        inside = np.all(np.abs(target) <= window.radius_L, axis=1)
        side = 2 * window.radius_L + 1
        radix = side ** np.arange(window.dim_m - 1, -1, -1)
        cols = ((target + window.radius_L) * radix).sum(axis=1)
        rows = np.nonzero(inside)[0]
        profile = scipy.sparse.csr_matrix(
            (np.ones(rows.size), (rows, cols[inside])), shape=(window.size, window.size)
        )
        return cls.from_profile(window, profile)

    @classmethod
    def from_blocks(
        cls,
        window: LatticeWindow,
        blocks: Mapping[Tuple[Tuple[int, ...], Tuple[int, ...]], Sequence],
        cutoff: float = settings.BLOCK_CUTOFF,
    ) -> "BlockLinearMap":
        n = window.node_dim_n
        is_complex = any(np.iscomplexobj(np.asarray(b)) for b in blocks.values())
        local = np.arange(n)
        rows, cols, vals = [], [], []
        for (i_multi, j_multi), block in blocks.items():
            block = np.atleast_2d(np.asarray(block, dtype=complex if is_complex else float))
            if block.shape != (n, n):
                raise WindowMismatch(f"block at {i_multi},{j_multi} has shape {block.shape}, expected {(n, n)}")
            if vector_norm(block, settings.NODE_NORM).max() < cutoff:
                continue
            i, j = window.index_of(tuple(i_multi)), window.index_of(tuple(j_multi))
            rows.append(np.repeat(i * n + local, n))
            cols.append(np.tile(j * n + local, n))
            vals.append(block.reshape(-1))
        if not vals:
            return cls.zeros(window)
        mat = scipy.sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(window.dim, window.dim)
        )
        return cls(window, mat)

    # ---- views ----
    @property
    def is_sparse(self) -> bool:
        return scipy.sparse.issparse(self.matrix)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray() if self.is_sparse else self.matrix

    def blocks(self) -> np.ndarray:
        """(s, s, n, n) view of the stored blocks (densifies)."""
        return to_blocks(self.dense(), self.window)

    def block(self, i: int, j: int) -> np.ndarray:
        n = self.window.node_dim_n
        sub = self.matrix[i * n:(i + 1) * n, j * n:(j + 1) * n]
        return sub.toarray() if self.is_sparse else sub.copy()

    def diagonal_blocks(self) -> np.ndarray:
        """(s, n, n) stack of the blocks A_ii."""
        s, n = self.window.size, self.window.node_dim_n
        if not self.is_sparse:
            return self.blocks()[np.arange(s), np.arange(s)]
        coo = self.matrix.tocoo()
        on = coo.row // n == coo.col // n
        out = np.zeros((s, n, n), dtype=self.matrix.dtype)
        np.add.at(out, (coo.row[on] // n, coo.row[on] % n, coo.col[on] % n), coo.data[on])
        return out

    def diagonal_part(self) -> "BlockLinearMap":
        n = self.window.node_dim_n
        if not self.is_sparse:
            mask = np.kron(np.eye(self.window.size), np.ones((n, n)))
            return BlockLinearMap(self.window, self.matrix * mask)
        coo = self.matrix.tocoo()
        on = coo.row // n == coo.col // n
        return BlockLinearMap(
            self.window, scipy.sparse.coo_matrix((coo.data[on], (coo.row[on], coo.col[on])), shape=coo.shape)
        )

    @cached_property
    def stored_block_norms(self) -> Tuple[np.ndarray, np.ndarray]:
        """Node pairs (b, 2) of the nonzero blocks and their norms."""
        if self.is_sparse:
            return block_norm_entries(SparseTensor.from_scipy(self.matrix), self.window.node_dim_n)
        return _dense_entries(block_norms(self.matrix, self.window))

    @cached_property
    def op_norm_bound(self) -> float:
        keys, norms = self.stored_block_norms
        if not norms.size:
            return 0.0
        return float(np.bincount(keys[:, 0], weights=norms, minlength=self.window.size).max())

    # ---- algebra ----
    def __call__(self, x: LatticeVector) -> LatticeVector:
        _check_same_window(self.window, x.window)
        return LatticeVector(self.window, np.asarray(self.matrix @ x.values).reshape(-1))

    def __add__(self, other: "BlockLinearMap") -> "BlockLinearMap":
        _check_same_window(self.window, other.window)
        a, b = _pair(self.matrix, other.matrix)
        return BlockLinearMap(self.window, a + b)

    def __sub__(self, other: "BlockLinearMap") -> "BlockLinearMap":
        _check_same_window(self.window, other.window)
        a, b = _pair(self.matrix, other.matrix)
        return BlockLinearMap(self.window, a - b)

    def __mul__(self, c: Number) -> "BlockLinearMap":
        return BlockLinearMap(self.window, self.matrix * c)

    __rmul__ = __mul__

    def __neg__(self) -> "BlockLinearMap":
        return BlockLinearMap(self.window, -self.matrix)

    def __matmul__(self, other: "BlockLinearMap") -> "BlockLinearMap":
        return compose_linear(self, other)

    def power(self, exponent: int) -> "BlockLinearMap":
        if exponent < 0:
            raise PreconditionViolated(f"negative power {exponent}; invert first")
        if not self.is_sparse:
            return BlockLinearMap(self.window, np.linalg.matrix_power(self.matrix, exponent))
        result = scipy.sparse.identity(self.window.dim, dtype=self.matrix.dtype, format="csr")
        base = self.matrix
        while exponent:
            if exponent & 1:
                result = result @ base
            exponent >>= 1
            if exponent:
                base = base @ base
        return BlockLinearMap(self.window, result)

    def real_if_close(self, tol: float = 1e-12) -> "BlockLinearMap":
        if not np.iscomplexobj(self.matrix):
            return self
        imag = self.matrix.data.imag if self.is_sparse else self.matrix.imag
        if np.abs(imag).max(initial=0.0) <= tol:
            return BlockLinearMap(self.window, self.matrix.real.copy())
        return self


# -------- norms on maps --------
def op_norm(A: BlockLinearMap) -> float:
    """sup_i sum_j ||A_ij||; exact for n = 1, an upper bound otherwise (see norm_mode)."""
    return A.op_norm_bound


def gamma(A: BlockLinearMap, gamma_fn: _Profile) -> float:
    """sup_ij ||A_ij|| / Gamma(i - j); inf when a nonzero block sits where Gamma is zero."""
    keys, norms = A.stored_block_norms
    return _decay_ratio(norms, pair_decay(gamma_fn, A.window, keys[:, 0], keys[:, 1]))


def gamma_norm(A: BlockLinearMap, gamma_fn: _Profile) -> float:
    return max(op_norm(A), gamma(A, gamma_fn))


def compose_linear(A: BlockLinearMap, B: BlockLinearMap) -> BlockLinearMap:
    _check_same_window(A.window, B.window)
    a, b = _pair(A.matrix, B.matrix)
    return BlockLinearMap(A.window, a @ b)


# -------- inversion --------
def neumann_invert(
    M0_inverse: BlockLinearMap,
    M1: BlockLinearMap,
    gamma_fn: _Profile,
    tol: float = 1e-14,
    max_terms: int = 500,
) -> BlockLinearMap:
    """(M0 + M1)^-1 as sum_j (-M0^-1 M1)^j M0^-1, stopped once a term's Gamma-norm drops below tol."""
    _check_same_window(M0_inverse.window, M1.window)
    q = gamma_norm(M0_inverse, gamma_fn) * gamma_norm(M1, gamma_fn)
    if q >= 1.0:
        raise PreconditionViolated(
            f"Neumann series needs ||M0^-1||_G ||M1||_G < 1, got {q:.6g}", {"q": q}
        )
    step = -(M0_inverse @ M1)
    term = M0_inverse
    total = term
    for j in range(1, max_terms + 1):
        term = step @ term
        total = total + term
        if gamma_norm(term, gamma_fn) < tol:
            logger.debug("neumann_invert converged after %d terms (q=%.3e)", j, q)
            return total
    raise NoConvergence(f"Neumann series did not reach tol={tol} in {max_terms} terms", {"q": q})


def linear_inverse(A: BlockLinearMap, gamma_fn: Optional[_Profile] = None) -> BlockLinearMap:
    """
    Inverse of A. With a decay function, split A into its block-diagonal part and
    the couplings and use the Neumann series when it converges; otherwise a dense
    solve guarded by the condition number.
    """
    if gamma_fn is not None:
        M0 = A.diagonal_part()
        diag_blocks = A.diagonal_blocks()
        try:
            if np.linalg.cond(diag_blocks).max(initial=0.0) < settings.SINGULAR_COND:
                inv_blocks = np.linalg.inv(diag_blocks)
                M0_inv = BlockLinearMap(A.window, _block_diag_matrix(inv_blocks, A.is_sparse))
                M1 = A - M0
                scale = gamma_norm(M0_inv, gamma_fn)
                if scale * gamma_norm(M1, gamma_fn) < 1.0:
                    return neumann_invert(M0_inv, M1, gamma_fn, tol=1e-15 * max(1.0, scale))
        except np.linalg.LinAlgError:
            logger.debug("block-diagonal part singular; falling back to dense inverse")
        except NoConvergence:
            logger.debug("Neumann series too slow; falling back to dense inverse")
    dense = A.dense()
    cond = np.linalg.cond(dense) if A.window.dim else 1.0
    if not np.isfinite(cond) or cond > settings.SINGULAR_COND:
        raise NotInvertible(f"linear part is numerically singular (cond={cond:.3e})", {"cond": float(cond)})
    return BlockLinearMap(A.window, np.linalg.inv(dense))


def _block_diag_matrix(blocks: np.ndarray, sparse: bool = False) -> Matrix:
    if sparse:
        return scipy.sparse.block_diag(list(blocks), format="csr")
    s, n, _ = blocks.shape
    out = np.zeros((s * n, s * n), dtype=blocks.dtype)
    for i in range(s):
        out[i * n:(i + 1) * n, i * n:(i + 1) * n] = blocks[i]
    return out
