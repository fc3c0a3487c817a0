# lattice_sternberg/jets.py
"""
Polynomial jets at the fixed point: x -> sum_k C_k x^(k), C_k symmetric k-linear.

Composition follows Faa di Bruno grouped by integer partitions; the number of
orderings of a partition (j! / prod of multiplicity factorials) is computed
exactly with Fraction before it touches floating point.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Optional, Sequence, Tuple

import numpy as np

from lattice_sternberg.decay import LatticeWindow, _Profile
from lattice_sternberg.errors import ArityMismatch, PreconditionViolated
from lattice_sternberg.lattice import (
    BlockLinearMap,
    LatticeVector,
    _check_same_window,
    linear_inverse,
)
from lattice_sternberg.multilinear import (
    MultiLinearMap,
    apply,
    compose_multi,
    contract,
    left_compose,
    ml_gamma,
    ml_gamma_norm,
    symmetrize,
)

logger = logging.getLogger("lattice_sternberg.jets")

MAX_DEGREE = 6


@dataclass(frozen=True, eq=False)
class PolyJet:
    window: LatticeWindow
    coefficients: Tuple[MultiLinearMap, ...]

    def __post_init__(self):
        coeffs = tuple(self.coefficients)
        if not coeffs:
            raise PreconditionViolated("a jet needs at least its linear part")
        for k, C in enumerate(coeffs, start=1):
            if C.arity != k:
                raise ArityMismatch(f"coefficient {k} has arity {C.arity}")
            _check_same_window(self.window, C.window)
        object.__setattr__(self, "coefficients", coeffs)

    @classmethod
    def from_coefficients(cls, window: LatticeWindow, coefficients: Sequence[MultiLinearMap]) -> "PolyJet":
        return cls(window, tuple(C if C.symmetric else symmetrize(C) for C in coefficients))

    @property
    def degree(self) -> int:
        return len(self.coefficients)

    @property
    def linear_part(self) -> BlockLinearMap:
        return self.coefficients[0].to_linear()

    def coefficient(self, k: int) -> Optional[MultiLinearMap]:
        """C_k, or None when k exceeds the stored degree (zero coefficient)."""
        return self.coefficients[k - 1] if 1 <= k <= self.degree else None

    def gamma_table(self, gamma_fn: _Profile) -> list:
        return [ml_gamma(C, gamma_fn) for C in self.coefficients]

    def gamma_norm_table(self, gamma_fn: _Profile) -> list:
        return [ml_gamma_norm(C, gamma_fn) for C in self.coefficients]


# -------- constructors --------
def linear_jet(A: BlockLinearMap) -> PolyJet:
    return PolyJet(A.window, (MultiLinearMap.from_linear(A),))


def identity_jet(window: LatticeWindow) -> PolyJet:
    return linear_jet(BlockLinearMap.identity(window))


def jet_truncate(f: PolyJet, r: int) -> PolyJet:
    return PolyJet(f.window, f.coefficients[:max(1, r)])


def _padded(f: PolyJet, k: int) -> MultiLinearMap:
    C = f.coefficient(k)
    return C if C is not None else MultiLinearMap.zeros(f.window, k)


def jet_add(f: PolyJet, g: PolyJet) -> PolyJet:
    _check_same_window(f.window, g.window)
    r = max(f.degree, g.degree)
    return PolyJet(f.window, tuple(_padded(f, k) + _padded(g, k) for k in range(1, r + 1)))


def jet_sub(f: PolyJet, g: PolyJet) -> PolyJet:
    return jet_add(f, jet_scale(g, -1.0))


def jet_scale(f: PolyJet, c: float) -> PolyJet:
    return PolyJet(f.window, tuple(C * c for C in f.coefficients))


def left_linear(A: BlockLinearMap, f: PolyJet) -> PolyJet:
    """A o f."""
    return PolyJet(f.window, tuple(left_compose(A, C) for C in f.coefficients))


# -------- composition --------
def _partitions(total: int, parts: int, largest: int) -> Iterator[Tuple[int, ...]]:
    """Nonincreasing tuples of `parts` positive integers <= largest summing to total."""
    if parts == 0:
        if total == 0:
            yield ()
        return
    for first in range(min(largest, total - parts + 1), 0, -1):
        if first * parts < total:
            break
        for rest in _partitions(total - first, parts - 1, first):
            yield (first,) + rest


def _orderings(partition: Tuple[int, ...]) -> Fraction:
    count = Fraction(math.factorial(len(partition)))
    for mult in Counter(partition).values():
        count /= math.factorial(mult)
    return count


def jet_coefficient(g: PolyJet, f: PolyJet, k: int) -> MultiLinearMap:
    """Order-k coefficient of g o f (g's coefficients assumed symmetric)."""
    _check_same_window(g.window, f.window)
    total = None
    for j in range(1, min(k, g.degree) + 1):
        gj = g.coefficient(j)
        if gj.is_zero():
            continue
        for part in _partitions(k, j, f.degree):
            inner = [f.coefficient(i) for i in part]
            if any(C.is_zero() for C in inner):
                continue
            term = compose_multi(gj, inner) * float(_orderings(part))
            total = term if total is None else total + term
    if total is None:
        return MultiLinearMap.zeros(g.window, k)
    return symmetrize(total)


def jet_compose(g: PolyJet, f: PolyJet, r: int) -> PolyJet:
    if r > MAX_DEGREE:
        raise PreconditionViolated(f"jet degree {r} exceeds {MAX_DEGREE}")
    _check_same_window(g.window, f.window)
    return PolyJet(g.window, tuple(jet_coefficient(g, f, k) for k in range(1, r + 1)))


def jet_invert(f: PolyJet, r: int, gamma_fn: Optional[_Profile] = None) -> PolyJet:
    """Series reversion: g with g o f = Id + O(x^(r+1)). Raises NotInvertible via linear_inverse."""
    A_inv = MultiLinearMap.from_linear(linear_inverse(f.linear_part, gamma_fn))
    coeffs = [A_inv]
    for k in range(2, r + 1):
        lower = jet_coefficient(PolyJet(f.window, tuple(coeffs)), f, k)
        coeffs.append(symmetrize(-compose_multi(lower, [A_inv] * k)))
    return PolyJet(f.window, tuple(coeffs))


def jet_iterate(f: PolyJet, m: int, r: int) -> PolyJet:
    if m < 1:
        raise PreconditionViolated(f"iteration count must be >= 1, got {m}")
    result = jet_truncate(f, r)
    for _ in range(m - 1):
        result = jet_compose(f, result, r)
    return result


# -------- evaluation --------
def jet_eval(f: PolyJet, x: LatticeVector) -> LatticeVector:
    out = np.zeros(f.window.dim, dtype=np.result_type(x.values.dtype, f.coefficients[0].dtype))
    for k, C in enumerate(f.coefficients, start=1):
        out = out + apply(C, [x] * k).values
    return LatticeVector(f.window, out)


def jet_jacobian(f: PolyJet, x: LatticeVector) -> BlockLinearMap:
    """Df(x) = sum_k k C_k(., x, ..., x)."""
    J = f.linear_part
    for k, C in enumerate(f.coefficients[1:], start=2):
        J = J + contract(C, list(range(2, k + 1)), [x] * (k - 1)).to_linear() * k
    return J


def rescale(f: PolyJet, delta: float) -> PolyJet:
    """delta^-1 f(delta x): order k scaled by delta^(k-1)."""
    if delta <= 0:
        raise PreconditionViolated(f"rescaling factor must be > 0, got {delta}")
    return PolyJet(f.window, tuple(C * (delta ** (k - 1)) for k, C in enumerate(f.coefficients, start=1)))
