# lattice_sternberg/decay.py
"""
Decay functions on Z^m and their verification on truncated windows.

- LatticeWindow: the index box {-L..L}^m with n components per node
- DecayFunction: Gamma(j) = a |j|^-alpha e^-theta|j| (a at j = 0)
- TabulatedDecay: user-supplied radial profile, zero beyond the table
- verify_decay: summability and convolution margins on a window
- decay_tail: upper bound of the mass outside a window
- make_power_exp_decay: largest verified amplitude on a 2^-t grid + bisection
"""

from __future__ import annotations

import itertools
import logging
import math
from functools import lru_cache
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, validator

from lattice_sternberg import settings
from lattice_sternberg.errors import (
    NoValidAmplitude,
    NotSummable,
    PreconditionViolated,
    WindowMismatch,
)

logger = logging.getLogger("lattice_sternberg.decay")

LATTICE_NORMS = ("euclid", "sup")
FAR_CUTOFF_POINTS = 1_000_000


# -------- windows --------
class LatticeWindow(BaseModel):
    dim_m: int = Field(..., gt=0)
    radius_L: int = Field(..., ge=0)
    node_dim_n: int = Field(1, gt=0)

    class Config:
        frozen = True

    @property
    def size(self) -> int:
        return (2 * self.radius_L + 1) ** self.dim_m

    @property
    def dim(self) -> int:
        return self.size * self.node_dim_n

    @property
    def offsets(self) -> np.ndarray:
        return _window_offsets(self.dim_m, self.radius_L)

    def index_of(self, multi: Tuple[int, ...]) -> int:
        if len(multi) != self.dim_m:
            raise WindowMismatch(f"multi-index {multi} has wrong length for m={self.dim_m}")
        side = 2 * self.radius_L + 1
        idx = 0
        for c in multi:
            if abs(c) > self.radius_L:
                raise WindowMismatch(f"multi-index {multi} outside window L={self.radius_L}")
            idx = idx * side + (c + self.radius_L)
        return idx

    def with_radius(self, radius_L: int) -> "LatticeWindow":
        return LatticeWindow(dim_m=self.dim_m, radius_L=radius_L, node_dim_n=self.node_dim_n)


@lru_cache(maxsize=64)
def _window_offsets(dim_m: int, radius_L: int) -> np.ndarray:
    rng = range(-radius_L, radius_L + 1)
    arr = np.array(list(itertools.product(rng, repeat=dim_m)), dtype=np.int64).reshape(-1, dim_m)
    arr.flags.writeable = False
    return arr


def lattice_abs(offsets: np.ndarray, norm: str) -> np.ndarray:
    """|j| for an array of multi-indices (last axis = coordinates)."""
    offsets = np.asarray(offsets, dtype=float)
    if norm == "sup":
        return np.abs(offsets).max(axis=-1)
    return np.sqrt((offsets * offsets).sum(axis=-1))


# -------- reports --------
class VerificationReport(BaseModel):
    alpha: Optional[float] = None
    theta: Optional[float] = None
    a: float
    dim_m: int
    window_L: int
    lattice_norm: str
    sum_window: float
    tail: float
    sum_margin: float
    conv_margin: float
    worst_pair: List[List[int]]
    positive: bool

    @property
    def summability_ok(self) -> bool:
        return self.sum_margin >= 0.0

    @property
    def convolution_ok(self) -> bool:
        return self.conv_margin >= 0.0

    @property
    def passed(self) -> bool:
        return self.positive and self.summability_ok and self.convolution_ok

    def record(self) -> dict:
        data = self.dict()
        data.update(passed=self.passed, summability_ok=self.summability_ok, convolution_ok=self.convolution_ok)
        return data


# -------- profiles --------
class _Profile(BaseModel):
    dim_m: int = Field(..., gt=0)
    lattice_norm: str = settings.LATTICE_NORM

    class Config:
        allow_mutation = False

    @validator("lattice_norm")
    def known_norm(cls, v):
        if v not in LATTICE_NORMS:
            raise ValueError(f"lattice_norm must be one of {LATTICE_NORMS}")
        return v

    def radial(self, r: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def key(self) -> tuple:
        raise NotImplementedError

    def evaluate(self, offsets: np.ndarray) -> np.ndarray:
        return self.radial(lattice_abs(offsets, self.lattice_norm))

    def __call__(self, j) -> float:
        j = np.atleast_1d(np.asarray(j))
        return float(self.evaluate(j.reshape(1, -1))[0])

    @property
    def gamma0(self) -> float:
        return float(self.radial(np.zeros(1))[0])

    def matrix(self, window: LatticeWindow) -> np.ndarray:
        """Gamma(i - j) for every pair of window nodes."""
        if window.dim_m != self.dim_m:
            raise WindowMismatch(f"window dim {window.dim_m} != decay dim {self.dim_m}")
        return _gamma_matrix(self, window.dim_m, window.radius_L)


class DecayFunction(_Profile):
    alpha: float = Field(..., gt=0)
    theta: float = Field(0.0, ge=0)
    amplitude_a: float = Field(..., gt=0)
    certificate: Optional[VerificationReport] = None

    def radial(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        safe = np.where(r > 0, r, 1.0)
        with np.errstate(under="ignore"):
            vals = self.amplitude_a * safe ** (-self.alpha) * np.exp(-self.theta * safe)
        return np.where(r > 0, vals, self.amplitude_a)

    def key(self) -> tuple:
        return ("power_exp", self.dim_m, self.lattice_norm, self.alpha, self.theta, self.amplitude_a)

    def scaled(self, amplitude_a: float) -> "DecayFunction":
        return DecayFunction(
            dim_m=self.dim_m, lattice_norm=self.lattice_norm,
            alpha=self.alpha, theta=self.theta, amplitude_a=amplitude_a,
        )


class TabulatedDecay(_Profile):
    values: List[float] = Field(..., min_items=1)  # Gamma at |j| = 0, 1, 2, ...; zero beyond

    def radial(self, r: np.ndarray) -> np.ndarray:
        table = np.asarray(self.values, dtype=float)
        idx = np.floor(np.asarray(r, dtype=float) + 1e-12).astype(np.int64)
        inside = idx < table.size
        return np.where(inside, table[np.minimum(idx, table.size - 1)], 0.0)

    def key(self) -> tuple:
        return ("table", self.dim_m, self.lattice_norm, tuple(self.values))


_MATRIX_CACHE: dict = {}


def _gamma_matrix(profile: _Profile, dim_m: int, radius_L: int) -> np.ndarray:
    cache_key = (profile.key(), radius_L)
    cached = _MATRIX_CACHE.get(cache_key)
    if cached is not None:
        return cached
    offs = _window_offsets(dim_m, radius_L)
    diffs = offs[:, None, :] - offs[None, :, :]
    mat = profile.evaluate(diffs)
    mat.flags.writeable = False
    if len(_MATRIX_CACHE) > 64:
        _MATRIX_CACHE.clear()
    _MATRIX_CACHE[cache_key] = mat
    return mat


# -------- tail bounds --------
def _far_cutoff(dim_m: int) -> int:
    return int(min(4096, (FAR_CUTOFF_POINTS ** (1.0 / dim_m) - 1) // 2))


@lru_cache(maxsize=32)
def _ring_sums(key: tuple, far: int) -> np.ndarray:
    """Exact sums of Gamma over the shells |k|_inf = r, r = 0..far."""
    kind, dim_m, norm = key[0], key[1], key[2]
    profile: _Profile
    if kind == "power_exp":
        profile = DecayFunction(dim_m=dim_m, lattice_norm=norm, alpha=key[3], theta=key[4], amplitude_a=key[5])
    else:
        profile = TabulatedDecay(dim_m=dim_m, lattice_norm=norm, values=list(key[3]))
    offs = _window_offsets(dim_m, far)
    shell = np.abs(offs).max(axis=1)
    return np.bincount(shell, weights=profile.evaluate(offs), minlength=far + 1)


def _integral_tail(gamma: DecayFunction, cutoff: int) -> float:
    m, alpha = gamma.dim_m, gamma.alpha
    e = float(max(cutoff, 1))
    growth = 2 * m * (2.0 + 1.0 / e) ** (m - 1)
    return growth * gamma.amplitude_a * math.exp(-gamma.theta * e) * e ** (m - alpha) / (alpha - m)


def decay_tail(gamma: DecayFunction, L: int) -> float:
    """
    Upper bound for the sum of Gamma over |k|_inf > L.
    Exact shell sums up to a far cutoff, integral comparison beyond it.
    """
    if L < 0:
        raise PreconditionViolated(f"tail radius must be >= 0, got {L}")
    if gamma.alpha <= gamma.dim_m:
        raise NotSummable(f"alpha={gamma.alpha} <= m={gamma.dim_m}: tail diverges")
    far = _far_cutoff(gamma.dim_m)
    if L >= far:
        return _integral_tail(gamma, L)
    rings = _ring_sums(gamma.key(), far)
    return float(rings[L + 1:].sum()) + _integral_tail(gamma, far)


def profile_tail(profile: _Profile, L: int) -> float:
    if isinstance(profile, DecayFunction):
        return decay_tail(profile, L)
    # tabulated profiles have finite support
    support = len(profile.values) + 1
    if L >= support:
        return 0.0
    rings = _ring_sums(profile.key(), support)
    return float(rings[L + 1:].sum())


# -------- verification --------
def verify_decay(gamma: _Profile, window_L: int) -> VerificationReport:
    """Both decay-function inequalities on {-L..L}^m; failures are reported, never raised."""
    window = LatticeWindow(dim_m=gamma.dim_m, radius_L=window_L)
    G = gamma.matrix(window)
    values = gamma.evaluate(window.offsets)
    sum_window = float(values.sum())
    tail = profile_tail(gamma, window_L)

    conv = G @ G
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(G > 0, (G - conv) / G, -np.inf)
    flat = int(np.argmin(rel))
    i, j = divmod(flat, G.shape[1])
    offs = window.offsets

    report = VerificationReport(
        alpha=getattr(gamma, "alpha", None),
        theta=getattr(gamma, "theta", None),
        a=gamma.gamma0,
        dim_m=gamma.dim_m,
        window_L=window_L,
        lattice_norm=gamma.lattice_norm,
        sum_window=sum_window,
        tail=tail,
        sum_margin=1.0 - sum_window - tail,
        conv_margin=float(rel[i, j]),
        worst_pair=[offs[i].tolist(), offs[j].tolist()],
        positive=bool(np.all(G > 0)),
    )
    logger.debug(
        "verify_decay L=%d sum_margin=%.3e conv_margin=%.3e", window_L, report.sum_margin, report.conv_margin
    )
    return report


def make_power_exp_decay(
    alpha: float,
    theta: float,
    dim_m: int,
    verify_window_L: int,
    lattice_norm: str = settings.LATTICE_NORM,
    bisection_steps: int = 40,
    max_halvings: int = 80,
) -> DecayFunction:
    if alpha <= dim_m:
        raise NotSummable(f"alpha={alpha} must exceed the lattice dimension m={dim_m}")
    if theta < 0:
        raise PreconditionViolated(f"theta must be >= 0, got {theta}")
    if verify_window_L < 8:
        raise PreconditionViolated(f"verification window must be >= 8, got {verify_window_L}")

    unit = DecayFunction(dim_m=dim_m, lattice_norm=lattice_norm, alpha=alpha, theta=theta, amplitude_a=1.0)
    window = LatticeWindow(dim_m=dim_m, radius_L=verify_window_L)
    phi = unit.matrix(window)
    if not np.all(phi > 0):
        raise NoValidAmplitude(f"profile underflows on the verification window (theta={theta})")
    mass = float(unit.evaluate(window.offsets).sum()) + decay_tail(unit, verify_window_L)
    phi2 = phi @ phi

    # sums scale like a, convolutions like a^2
    def admissible(a: float) -> bool:
        return a * mass <= 1.0 and bool(np.all(a * phi2 <= phi))

    lo = None
    for t in range(max_halvings + 1):
        if admissible(2.0 ** -t):
            lo = 2.0 ** -t
            break
    if lo is None:
        raise NoValidAmplitude(f"no amplitude 2^-t, t<={max_halvings}, satisfies both properties")
    hi = 2.0 * lo
    for _ in range(bisection_steps):
        mid = 0.5 * (lo + hi)
        if admissible(mid):
            lo = mid
        else:
            hi = mid

    a = lo
    for _ in range(8):
        candidate = unit.scaled(a)
        report = verify_decay(candidate, verify_window_L)
        if report.passed:
            logger.info(
                "decay alpha=%s theta=%s m=%d a=%.6e sum_margin=%.3e conv_margin=%.3e",
                alpha, theta, dim_m, a, report.sum_margin, report.conv_margin,
            )
            return candidate.copy(update={"certificate": report})
        a *= 1.0 - 1e-9
    raise NoValidAmplitude(f"independent verification rejected amplitude a={a:.6e}")
