# lattice_sternberg/sylvester.py
"""
Sylvester operators S_{B,A}(W) = B W(A., ..., A.), resonance detection and
the homological equation (S_{A^-1,A} - id) K = rhs.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
from pydantic import BaseModel

from lattice_sternberg import settings
from lattice_sternberg.decay import _Profile
from lattice_sternberg.errors import (
    ArityMismatch,
    MethodInapplicable,
    NoConvergence,
    NotContraction,
    ResonantOrder,
    TooLarge,
)
from lattice_sternberg.lattice import BlockLinearMap, _check_same_window, linear_inverse, op_norm
from lattice_sternberg.multilinear import MultiLinearMap, compose_multi, left_compose

logger = logging.getLogger("lattice_sternberg.sylvester")

EIGENBASIS_MAX_COND = 1e8


@dataclass(frozen=True, eq=False)
class SylvesterOperator:
    left: BlockLinearMap
    right: BlockLinearMap
    arity: int

    def __post_init__(self):
        _check_same_window(self.left.window, self.right.window)
        if self.arity < 1:
            raise ArityMismatch(f"Sylvester operator arity must be >= 1, got {self.arity}")

    def __call__(self, W: MultiLinearMap) -> MultiLinearMap:
        return sylvester_apply(self, W)


class ResonanceWitness(BaseModel):
    order: int
    target: int
    exponents: List[int]
    gap: float


class ResonanceSet(BaseModel):
    orders: Tuple[int, int]
    tol: float
    spectrum_re: List[float]
    spectrum_im: List[float]
    resonant_orders: List[int]
    witnesses: List[ResonanceWitness]

    @property
    def is_empty(self) -> bool:
        return not self.resonant_orders


# -------- action --------
def sylvester_apply(op: SylvesterOperator, W: MultiLinearMap) -> MultiLinearMap:
    if W.arity != op.arity:
        raise ArityMismatch(f"operator of arity {op.arity} applied to arity {W.arity} map")
    _check_same_window(op.left.window, W.window)
    A = MultiLinearMap.from_linear(op.right)
    inner = compose_multi(W, [A] * op.arity)
    return MultiLinearMap(W.window, left_compose(op.left, inner).tensor, W.symmetric)


def sylvester_matrix(op: SylvesterOperator, limit: int = 4096) -> np.ndarray:
    """Matrix of S_{B,A} on C-order flattened tensors: kron(B, A^T, ..., A^T)."""
    unknowns = op.left.window.dim ** (op.arity + 1)
    if unknowns > limit:
        raise TooLarge(f"vectorized Sylvester operator has {unknowns} unknowns (limit {limit})")
    out = op.left.dense()
    for _ in range(op.arity):
        out = np.kron(out, op.right.dense().T)
    return out


# -------- resonances --------
def _unique_values(values: Sequence[complex], tol: float) -> np.ndarray:
    uniq: List[complex] = []
    for v in sorted((complex(x) for x in values), key=lambda z: (z.real, z.imag)):
        if all(abs(v - u) >= tol for u in uniq):
            uniq.append(v)
    return np.asarray(uniq, dtype=complex)


def resonance_set(spectrum: Sequence[complex], r0: int, tol: float = settings.RESONANCE_TOL) -> ResonanceSet:
    """Orders j in [2, r0] for which some product of j spectral values hits the spectrum."""
    uniq = _unique_values(spectrum, tol)
    witnesses: List[ResonanceWitness] = []
    orders: List[int] = []
    for j in range(2, r0 + 1):
        combos = np.array(list(itertools.combinations_with_replacement(range(uniq.size), j)), dtype=np.int64)
        if combos.size == 0:
            continue
        products = uniq[combos].prod(axis=1)
        gaps = np.abs(uniq[None, :] - products[:, None])
        hits = np.argwhere(gaps < tol)
        for combo_idx, target in hits:
            exponents = np.bincount(combos[combo_idx], minlength=uniq.size).tolist()
            witnesses.append(
                ResonanceWitness(order=j, target=int(target), exponents=exponents, gap=float(gaps[combo_idx, target]))
            )
        if hits.size:
            orders.append(j)
    return ResonanceSet(
        orders=(2, r0),
        tol=tol,
        spectrum_re=uniq.real.tolist(),
        spectrum_im=uniq.imag.tolist(),
        resonant_orders=orders,
        witnesses=witnesses,
    )


def detect_resonances(spectrum: Sequence[complex], r0: int, tol: float = settings.RESONANCE_TOL) -> ResonanceSet:
    moduli = np.abs(np.asarray(list(spectrum), dtype=complex))
    if moduli.size and (moduli.max() >= 1.0 or moduli.min() == 0.0):
        raise NotContraction(
            f"spectrum moduli must lie in (0, 1), got [{moduli.min():.6g}, {moduli.max():.6g}]",
            {"min_modulus": float(moduli.min()), "max_modulus": float(moduli.max())},
        )
    result = resonance_set(spectrum, r0, tol)
    logger.info("resonant orders up to %d: %s", r0, result.resonant_orders or "none")
    return result


# -------- homological equation --------
def _change_basis(T: np.ndarray, out_mat: np.ndarray, in_mat: np.ndarray) -> np.ndarray:
    """out_mat . T(in_mat ., ..., in_mat .)"""
    t = np.tensordot(out_mat, T, axes=([1], [0]))
    for p in range(1, T.ndim):
        t = np.moveaxis(np.tensordot(t, in_mat, axes=([p], [0])), -1, p)
    return t


def _divisors(eig: np.ndarray, arity: int) -> np.ndarray:
    """d[o, j_1..j_k] = eig_j1 ... eig_jk / eig_o - 1."""
    prod = np.ones((1,) * (arity + 1), dtype=complex)
    for p in range(1, arity + 1):
        shape = [1] * (arity + 1)
        shape[p] = eig.size
        prod = prod * eig.reshape(shape)
    shape = [1] * (arity + 1)
    shape[0] = eig.size
    return prod / eig.reshape(shape) - 1.0


def homological_condition(A: BlockLinearMap, arity: int) -> float:
    """Estimate of ||(S_{A^-1,A} - id)^-1|| at the given order."""
    eig, V = scipy.linalg.eig(A.dense())
    uniq = _unique_values(eig, 1e-12)
    smallest = np.inf
    for combo in itertools.combinations_with_replacement(range(uniq.size), arity):
        prod = np.prod(uniq[list(combo)])
        smallest = min(smallest, float(np.abs(prod / uniq - 1.0).min()))
    if smallest == 0.0:
        return float("inf")
    return float(np.linalg.cond(V) ** (arity + 1) / smallest)


def _solve_eigenbasis(
    A: BlockLinearMap, rhs: MultiLinearMap, tol: float, resonance_tol: float
) -> Optional[np.ndarray]:
    eig, V = scipy.linalg.eig(A.dense())
    if np.linalg.cond(V) > EIGENBASIS_MAX_COND:
        return None
    V_inv = np.linalg.inv(V)
    rhs_t = _change_basis(rhs.dense().astype(complex), V_inv, V)
    div = _divisors(eig, rhs.arity)
    small = np.abs(div) < resonance_tol
    if small.any():
        hit = float(np.abs(rhs_t[small]).max())
        scale = max(1.0, float(np.abs(rhs_t).max()))
        if hit > tol * scale:
            raise ResonantOrder(
                f"order {rhs.arity}: right-hand side has weight {hit:.3e} on {int(small.sum())} resonant directions",
                {"order": rhs.arity, "weight": hit, "resonant_directions": int(small.sum())},
            )
        logger.warning("order %d: singular homological system, right-hand side orthogonal to kernel", rhs.arity)
        div = np.where(small, np.inf, div)
    return _change_basis(rhs_t / div, V, V_inv)


def _solve_dense(A_inv: BlockLinearMap, A: BlockLinearMap, rhs: MultiLinearMap) -> np.ndarray:
    unknowns = rhs.window.dim ** (rhs.arity + 1)
    if unknowns > settings.DIRECT_LIMIT:
        raise TooLarge(
            f"order {rhs.arity}: {unknowns} unknowns exceed the dense limit {settings.DIRECT_LIMIT}",
            {"unknowns": unknowns},
        )
    op = SylvesterOperator(A_inv, A, rhs.arity)
    system = sylvester_matrix(op, limit=settings.DIRECT_LIMIT) - np.eye(unknowns)
    cond = np.linalg.cond(system)
    if not np.isfinite(cond) or cond > settings.SINGULAR_COND:
        raise ResonantOrder(f"order {rhs.arity}: vectorized system singular (cond={cond:.3e})", {"cond": float(cond)})
    target = rhs.dense()
    return np.linalg.solve(system, target.reshape(-1)).reshape(target.shape)


def _solve_neumann(
    A_inv: BlockLinearMap, A: BlockLinearMap, rhs: MultiLinearMap, tol: float, max_iter: int
) -> MultiLinearMap:
    estimate = op_norm(A_inv) * op_norm(A) ** rhs.arity
    if estimate >= 1.0:
        raise MethodInapplicable(
            f"order {rhs.arity}: contraction estimate {estimate:.4g} >= 1, use the direct method",
            {"estimate": estimate},
        )
    op = SylvesterOperator(A_inv, A, rhs.arity)
    K = -rhs
    scale = max(1.0, rhs.max_abs())
    for it in range(1, max_iter + 1):
        nxt = sylvester_apply(op, K) - rhs
        step = (nxt - K).max_abs()
        K = nxt
        if step < tol * scale * (1.0 - estimate):
            logger.debug("neumann homological solve: %d iterations (estimate %.3e)", it, estimate)
            return K
    raise NoConvergence(f"order {rhs.arity}: Neumann iteration exceeded {max_iter} steps")


def solve_homological(
    A: BlockLinearMap,
    rhs: MultiLinearMap,
    method: str = "direct",
    tol: float = 1e-10,
    gamma_fn: Optional[_Profile] = None,
    resonance_tol: float = settings.RESONANCE_TOL,
    max_iter: int = 10_000,
) -> MultiLinearMap:
    """K with (S_{A^-1,A} - id) K = rhs. Sparse-stored orders are solved by Neumann iteration."""
    _check_same_window(A.window, rhs.window)
    if method not in ("direct", "neumann"):
        raise MethodInapplicable(f"unknown homological method {method!r}")
    if rhs.is_zero():
        return MultiLinearMap.zeros(rhs.window, rhs.arity)
    A_inv = linear_inverse(A, gamma_fn)
    if method == "direct" and rhs.is_sparse:
        logger.warning("order %d is stored sparse; solving by Neumann iteration", rhs.arity)
        try:
            solution = _solve_neumann(A_inv, A, rhs, tol, max_iter)
        except MethodInapplicable as err:
            raise TooLarge(
                f"order {rhs.arity} exceeds dense storage and the Neumann iteration does not contract",
                err.context,
            ) from err
    elif method == "neumann":
        solution = _solve_neumann(A_inv, A, rhs, tol, max_iter)
    else:
        K = _solve_eigenbasis(A, rhs, tol, resonance_tol)
        if K is None:
            logger.info("order %d: eigenvectors ill-conditioned, using the dense system", rhs.arity)
            K = _solve_dense(A_inv, A, rhs)
        if not np.iscomplexobj(A.matrix) and not np.iscomplexobj(rhs.tensor):
            K = np.real_if_close(K, tol=1e6)
            K = K.real if np.iscomplexobj(K) else K
        solution = MultiLinearMap(rhs.window, K, rhs.symmetric)

    op = SylvesterOperator(A_inv, A, rhs.arity)
    residual = (sylvester_apply(op, solution) - solution - rhs).max_abs()
    scale = max(1.0, solution.max_abs())
    if residual > tol * scale:
        raise NoConvergence(
            f"order {rhs.arity}: homological residual {residual:.3e} above tolerance",
            {"residual": residual, "condition": homological_condition(A, rhs.arity)},
        )
    logger.debug("order %d homological residual %.3e", rhs.arity, residual)
    return solution
