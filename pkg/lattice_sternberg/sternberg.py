# lattice_sternberg/sternberg.py
"""
Local linearization (or reduction to a polynomial normal form) of an
attracting fixed point by the limit R = lim M^{-mn} S_0 o F^{mn}.

S_0 is the inverse of the formal conjugacy to order r0, so the iteration only
has to remove terms of order > r0, where it contracts. R is evaluated
pointwise; its jet at 0 is the jet of S_0.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg
from pydantic import BaseModel, validator

from lattice_sternberg import settings
from lattice_sternberg.decay import LatticeWindow, _Profile
from lattice_sternberg.errors import (
    DomainEscape,
    NoConvergence,
    NotContraction,
    PreconditionViolated,
    ResonantOrder,
    Singular,
)
from lattice_sternberg.jets import (
    PolyJet,
    jet_compose,
    jet_eval,
    jet_invert,
    jet_iterate,
    jet_jacobian,
    jet_sub,
    linear_jet,
    rescale,
)
from lattice_sternberg.lattice import BlockLinearMap, LatticeVector, gamma_norm, linear_inverse, op_norm
from lattice_sternberg.multilinear import ml_gamma, ml_gamma_norm
from lattice_sternberg.normal_form import NormalFormResult, compute_normal_form
from lattice_sternberg.spectrum import spectral_bounds

logger = logging.getLogger("lattice_sternberg.sternberg")

MODES = ("perturbative", "spectral")
TARGETS = ("linear", "normal_form")
EPS = float(np.finfo(float).eps)

Target = Union[BlockLinearMap, PolyJet]


# -------- parameters --------
class SternbergConfig(BaseModel):
    alpha: float
    beta: float
    gamma0: float
    nu: float
    r0: int
    m: int
    delta: float
    eps1: float
    eps2: float
    eps3: float
    mode: str = "perturbative"
    base_factor: float
    lemma_value: float
    contraction_factor: Optional[float] = None

    @validator("beta")
    def beta_in_unit_disk(cls, v, values):
        if not 0.0 < values.get("alpha", 0.0) <= v * (1.0 + 1e-12) or v >= 1.0:
            raise ValueError(f"need 0 < alpha <= beta < 1, got alpha={values.get('alpha')}, beta={v}")
        return v

    @validator("mode")
    def known_mode(cls, v):
        if v not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        return v

    @property
    def certified_radius(self) -> float:
        return self.delta / 2.0


def order_from_moduli(alpha: float, beta: float) -> Tuple[float, int]:
    """(nu, r0) with nu = log(alpha) / log(beta) and r0 = floor(nu) + 1."""
    if beta >= 1.0 or alpha <= 0.0:
        raise NotContraction(f"need 0 < alpha <= beta < 1, got alpha={alpha}, beta={beta}",
                             {"alpha": alpha, "beta": beta})
    if alpha > beta * (1.0 + 1e-12):
        raise PreconditionViolated(f"alpha={alpha} exceeds beta={beta}")
    nu = math.log(alpha) / math.log(beta)
    return nu, max(2, int(math.floor(nu + 1e-12)) + 1)


def _lemma_value(alpha: float, beta: float, gamma0: float, r0: int, m: int, eps: Tuple[float, float, float]) -> float:
    e1, e2, e3 = eps
    return (1.0 / gamma0) * (1.0 / alpha + e1) ** m * ((1.0 / gamma0) * ((beta + e1) ** m + e2) ** r0 + e3)


def nonlinear_lipschitz(Fm: PolyJet, delta: float, gamma_fn: _Profile) -> float:
    """sum_{k>=2} k ||C_k(F^m)||_G delta^(k-1): Lipschitz bound of the rescaled nonlinearity on the unit ball."""
    return sum(
        k * ml_gamma_norm(C, gamma_fn) * delta ** (k - 1)
        for k, C in enumerate(Fm.coefficients, start=1)
        if k >= 2
    )


def contraction_factor(Fm: PolyJet, r0: int, delta: float, gamma_fn: _Profile) -> float:
    """
    ||M^-m||_G [(||M^m||_G + d)(||M^m|| + d)^(r0-1) + d], d the rescaled
    nonlinear Lipschitz bound. Nondecreasing in delta.
    """
    Mm = Fm.linear_part
    Mm_inv = linear_inverse(Mm, gamma_fn)
    d = nonlinear_lipschitz(Fm, delta, gamma_fn)
    outer = gamma_norm(Mm_inv, gamma_fn)
    return outer * ((gamma_norm(Mm, gamma_fn) + d) * (op_norm(Mm) + d) ** (r0 - 1) + d)


def node_moduli(M: BlockLinearMap) -> Tuple[float, float]:
    """(min, max) eigenvalue modulus of the block at the window centre."""
    window = M.window
    centre = window.index_of((0,) * window.dim_m)
    moduli = np.abs(scipy.linalg.eigvals(M.block(centre, centre)))
    return float(moduli.min()), float(moduli.max())


def select_m_delta(
    alpha: float,
    beta: float,
    gamma0: float,
    r0: Optional[int] = None,
    *,
    F: Optional[PolyJet] = None,
    gamma_fn: Optional[_Profile] = None,
    mode: str = "perturbative",
    max_m: int = 256,
    max_halvings: int = 60,
) -> SternbergConfig:
    nu, r0_default = order_from_moduli(alpha, beta)
    r0 = r0 or r0_default
    if gamma0 <= 0.0:
        raise PreconditionViolated(f"Gamma(0) must be > 0, got {gamma0}")

    ratio = beta ** r0 / alpha
    m = next((j for j in range(1, max_m + 1) if gamma0 ** -2 * ratio ** j < 1.0), None)
    if m is None:
        raise NotContraction(f"no m <= {max_m} with Gamma(0)^-2 (beta^r0/alpha)^m < 1",
                             {"ratio": ratio, "gamma0": gamma0})

    eps = (0.1, 0.1, 0.1)
    for _ in range(max_halvings):
        if _lemma_value(alpha, beta, gamma0, r0, m, eps) < 1.0:
            break
        eps = tuple(e / 2.0 for e in eps)
    else:
        raise NotContraction(f"epsilon search failed for m={m}", {"m": m})

    delta = 1.0
    factor = None
    if F is not None and gamma_fn is not None:
        while True:
            Fm = jet_iterate(F, m, r0)
            if contraction_factor(Fm, r0, 0.0, gamma_fn) < 1.0:
                break
            if m >= max_m:
                raise NotContraction(f"measured contraction factor stays >= 1 up to m={max_m}", {"m": m})
            m += 1
        for _ in range(max_halvings):
            factor = contraction_factor(Fm, r0, delta, gamma_fn)
            if factor < 1.0:
                break
            delta /= 2.0
        else:
            raise NotContraction(f"no delta >= 2^-{max_halvings} gives a contraction", {"factor": factor})

    config = SternbergConfig(
        alpha=alpha, beta=beta, gamma0=gamma0, nu=nu, r0=r0, m=m, delta=delta,
        eps1=eps[0], eps2=eps[1], eps3=eps[2], mode=mode,
        base_factor=gamma0 ** -2 * ratio ** m,
        lemma_value=_lemma_value(alpha, beta, gamma0, r0, m, eps),
        contraction_factor=factor,
    )
    logger.info("selected m=%d delta=%.4g r0=%d (nu=%.4f, mode=%s)", m, delta, r0, nu, mode)
    return config


def configure(F: PolyJet, gamma_fn: _Profile, mode: str = "perturbative", r0: Optional[int] = None) -> SternbergConfig:
    """select_m_delta with alpha, beta taken from the map: node block eigenvalues or Gelfand estimates."""
    M = F.linear_part
    if mode == "perturbative":
        alpha, beta = node_moduli(M)
    elif mode == "spectral":
        alpha, beta = spectral_bounds(M, gamma_fn)
    else:
        raise PreconditionViolated(f"unknown mode {mode!r}")
    return select_m_delta(alpha, beta, gamma_fn.gamma0, r0, F=F, gamma_fn=gamma_fn, mode=mode)


# -------- S_0 --------
@dataclass
class ConjugacySeed:
    S0: PolyJet
    target: Target
    normal_form: NormalFormResult


def prepare_conjugacy(
    F: PolyJet,
    m: int,
    r0: int,
    target: str = "linear",
    gamma_fn: Optional[_Profile] = None,
    tol: float = 1e-10,
    resonance_tol: float = settings.RESONANCE_TOL,
) -> ConjugacySeed:
    """
    Linear target: S_0 = K^-1 for the normal form K of F^m (which must be
    linear). Normal-form target: S_0 = K^-1 for the normal form of F itself,
    and the iteration runs with the polynomial H.
    """
    if target == "linear":
        nf = compute_normal_form(jet_iterate(F, m, r0), r0, tol=tol, gamma_fn=gamma_fn, resonance_tol=resonance_tol)
        if nf.resonances.resonant_orders:
            raise ResonantOrder(
                f"linear target needs non-resonance, resonant orders {nf.resonances.resonant_orders}",
                {"resonant_orders": nf.resonances.resonant_orders},
            )
        goal: Target = F.linear_part
    elif target == "normal_form":
        nf = compute_normal_form(F, r0, tol=tol, gamma_fn=gamma_fn, resonance_tol=resonance_tol)
        goal = nf.H
    else:
        raise PreconditionViolated(f"unknown target {target!r}")
    S0 = jet_invert(nf.K, r0, gamma_fn)
    return ConjugacySeed(S0=S0, target=goal, normal_form=nf)


def build_S0(F: PolyJet, m: int, r0: int, target: str = "linear", gamma_fn: Optional[_Profile] = None) -> PolyJet:
    return prepare_conjugacy(F, m, r0, target, gamma_fn).S0


def _target_power_jet(target: Target, m: int, r: int) -> PolyJet:
    if isinstance(target, BlockLinearMap):
        return linear_jet(target.power(m))
    return jet_iterate(target, m, r)


def s0_defect(F: PolyJet, target: Target, S0: PolyJet, m: int, r0: int) -> List[float]:
    """Per-order max |coefficient| of S_0 o F^m - T^m o S_0 through order r0."""
    Fm = jet_iterate(F, m, r0)
    lhs = jet_compose(S0, Fm, r0)
    rhs = jet_compose(_target_power_jet(target, m, r0), S0, r0)
    return [C.max_abs() for C in jet_sub(lhs, rhs).coefficients]


# -------- pointwise evaluation --------
def newton_invert_poly(
    H: PolyJet, y: LatticeVector, tol: float = 1e-14, max_iter: int = 50,
    H_linear_inverse: Optional[BlockLinearMap] = None,
) -> LatticeVector:
    """x with H(x) = y, Newton from x_0 = A^-1 y."""
    A_inv = H_linear_inverse or linear_inverse(H.linear_part)
    x = A_inv(y)
    for it in range(max_iter):
        residual = jet_eval(H, x) - y
        if residual.norm() <= tol:
            return x
        try:
            step = scipy.linalg.solve(jet_jacobian(H, x).dense(), residual.values)
        except np.linalg.LinAlgError as exc:
            raise Singular(f"Jacobian of the target is singular at Newton step {it}", {"step": it}) from exc
        x = LatticeVector(x.window, x.values - step)
        if np.abs(step).max(initial=0.0) <= 4.0 * EPS * max(np.abs(x.values).max(initial=0.0), 1e-300):
            return x
    raise NoConvergence(f"Newton inversion did not reach tol={tol} in {max_iter} steps",
                        {"residual": residual.norm()})


@dataclass
class ConjugacyTrace:
    x: LatticeVector
    value: LatticeVector
    iterations: int
    increments: List[float] = field(default_factory=list)


def _inverse_step(target: Target, m: int, A_inv: BlockLinearMap) -> Callable[[LatticeVector], LatticeVector]:
    if isinstance(target, BlockLinearMap):
        Am_inv = A_inv.power(m)
        return Am_inv
    def step(z: LatticeVector) -> LatticeVector:
        for _ in range(m):
            z = newton_invert_poly(target, z, H_linear_inverse=A_inv)
        return z
    return step


def _rescaled_target(target: Target, delta: float) -> Target:
    return target if isinstance(target, BlockLinearMap) else rescale(target, delta)


def conjugacy_trace(
    F: PolyJet,
    target: Target,
    S0: PolyJet,
    m: int,
    x: LatticeVector,
    tol: float = 1e-14,
    N_max: int = 200,
    domain_radius: float = 1.0,
    delta: Optional[float] = None,
    certified_radius: Optional[float] = None,
) -> ConjugacyTrace:
    """
    R(x) with its increment history.

    With delta the iteration runs on the rescaled maps delta^-1 f(delta u) at
    u = x / delta, domain_radius bounds the rescaled iterates, and the value and
    increments are mapped back by delta. With certified_radius a point outside
    that ball is refused.
    """
    if certified_radius is not None and x.norm() > certified_radius * (1.0 + 1e-12):
        raise PreconditionViolated(
            f"|x| = {x.norm():.6g} is outside the certified ball of radius {certified_radius:.6g}",
            {"norm": x.norm(), "certified_radius": certified_radius},
        )
    if x.norm() == 0.0:
        return ConjugacyTrace(x=x, value=LatticeVector.zeros(x.window), iterations=0)
    scale = 1.0
    u = x
    if delta is not None:
        F, S0, target = rescale(F, delta), rescale(S0, delta), _rescaled_target(target, delta)
        scale = delta
        u = x * (1.0 / delta)
    A = target if isinstance(target, BlockLinearMap) else target.linear_part
    inverse_step = _inverse_step(target, m, linear_inverse(A))

    y = u
    current = jet_eval(S0, u)
    increments: List[float] = []
    for n in range(1, N_max + 1):
        for _ in range(m):
            y = jet_eval(F, y)
        if y.norm() > domain_radius:
            raise DomainEscape(f"iterate {n} left the ball of radius {domain_radius}",
                               {"iterate": n, "norm": y.norm(), "delta": scale})
        z = jet_eval(S0, y)
        for _ in range(n):
            z = inverse_step(z)
        inc = (z - current).norm() * scale
        increments.append(inc)
        current = z
        if inc < max(tol, 8.0 * EPS * current.norm() * scale):
            return ConjugacyTrace(x=x, value=current * scale, iterations=n, increments=increments)
    raise NoConvergence(f"conjugacy iteration did not settle in {N_max} steps",
                        {"last_increment": increments[-1] if increments else None})


def conjugacy_eval(
    F: PolyJet,
    target: Target,
    S0: PolyJet,
    m: int,
    x: LatticeVector,
    tol: float = 1e-14,
    N_max: int = 200,
    domain_radius: float = 1.0,
    delta: Optional[float] = None,
    certified_radius: Optional[float] = None,
) -> LatticeVector:
    return conjugacy_trace(F, target, S0, m, x, tol, N_max, domain_radius, delta, certified_radius).value


# -------- verification --------
class ConjugacyReport(BaseModel):
    samples: int
    residual_max: float
    residual_mean: float
    iterations_max: int
    increment_ratio_max: Optional[float]
    contraction_factor: Optional[float]
    geometric_ok: bool
    lipschitz_estimate: Optional[float]
    lipschitz_inconclusive: bool
    jet_agreement: List[float]
    gamma_derivatives: Dict[str, List[float]]
    certified_radius: Optional[float] = None
    residuals: List[float] = []
    iterations: List[int] = []

    @property
    def jet_ok(self) -> bool:
        return all(v <= 1e-8 for v in self.jet_agreement)


def _usable_ratios(trace: ConjugacyTrace) -> List[float]:
    floor = 1e3 * EPS * max(trace.value.norm(), 1e-300)
    usable = [v for v in trace.increments if v > floor]
    return [b / a for a, b in zip(usable, usable[1:]) if a > 0]


def _apply_target(target: Target, x: LatticeVector) -> LatticeVector:
    return target(x) if isinstance(target, BlockLinearMap) else jet_eval(target, x)


def jet_of_limit(F: PolyJet, target: Target, S0: PolyJet, m: int, r0: int, rounds: int = 3) -> PolyJet:
    """Jet-level iteration g <- T^-m o g o F^m started at S_0."""
    Fm = jet_iterate(F, m, r0)
    if isinstance(target, BlockLinearMap):
        inv = linear_jet(linear_inverse(target).power(m))
    else:
        inv = jet_invert(jet_iterate(target, m, r0), r0)
    g = S0
    for _ in range(rounds):
        g = jet_compose(inv, jet_compose(g, Fm, r0), r0)
    return g


def derivative_gammas(S0: PolyJet, gamma_fn: _Profile) -> List[float]:
    """gamma(D^k R(0)) = gamma(k! C_k(S_0)), k = 2..degree."""
    return [math.factorial(k) * ml_gamma(C, gamma_fn) for k, C in enumerate(S0.coefficients, start=1) if k >= 2]


def conjugacy_residual(
    F: PolyJet,
    target: Target,
    R_eval: Callable[[LatticeVector], ConjugacyTrace],
    samples: Sequence[LatticeVector],
    m: int,
    *,
    S0: Optional[PolyJet] = None,
    r0: Optional[int] = None,
    contraction: Optional[float] = None,
    gamma_fn: Optional[_Profile] = None,
    certified_radius: Optional[float] = None,
) -> ConjugacyReport:
    if certified_radius is not None:
        outside = [i for i, x in enumerate(samples) if x.norm() > certified_radius * (1.0 + 1e-12)]
        if outside:
            raise PreconditionViolated(
                f"{len(outside)} samples lie outside the certified ball of radius {certified_radius:.6g}",
                {"samples": outside[:10], "certified_radius": certified_radius},
            )

    def check(x: LatticeVector) -> Tuple[float, ConjugacyTrace]:
        trace = R_eval(x)
        image = R_eval(jet_eval(F, x)).value
        return (image - _apply_target(target, trace.value)).norm(), trace

    if settings.WORKERS > 1:
        with ThreadPoolExecutor(max_workers=settings.WORKERS) as pool:
            results = list(pool.map(check, samples))
    else:
        results = [check(x) for x in samples]

    residuals = [r for r, _ in results]
    ratios = [q for _, trace in results for q in _usable_ratios(trace)]
    bound = contraction if contraction is not None else 1.0
    lipschitz = max(ratios) if ratios else None
    inconclusive = len(ratios) < 2
    if inconclusive:
        logger.warning("Lipschitz measurement inconclusive: %d usable increment ratios", len(ratios))

    jet_agreement: List[float] = []
    gammas: Dict[str, List[float]] = {}
    if S0 is not None and r0 is not None:
        g = jet_of_limit(F, target, S0, m, r0)
        jet_agreement = [a.max_abs() for a in jet_sub(g, S0).coefficients]
        if gamma_fn is not None:
            gammas[str(S0.window.radius_L)] = derivative_gammas(S0, gamma_fn)

    return ConjugacyReport(
        samples=len(samples),
        residual_max=max(residuals, default=0.0),
        residual_mean=float(np.mean(residuals)) if residuals else 0.0,
        iterations_max=max((t.iterations for _, t in results), default=0),
        increment_ratio_max=lipschitz,
        contraction_factor=contraction,
        geometric_ok=all(q <= bound * (1.0 + 1e-6) for q in ratios),
        lipschitz_estimate=lipschitz,
        lipschitz_inconclusive=inconclusive,
        jet_agreement=jet_agreement,
        gamma_derivatives=gammas,
        certified_radius=certified_radius,
        residuals=residuals,
        iterations=[t.iterations for _, t in results],
    )


class DecayPersistenceReport(BaseModel):
    windows: List[int]
    gamma_K: Dict[str, List[float]]
    gamma_R: Dict[str, List[float]]
    spread_K: List[float]
    spread_R: List[float]
    tolerance: float = 0.1

    @property
    def stable(self) -> bool:
        return all(s <= self.tolerance for s in self.spread_K + self.spread_R)


def _spread(table: Dict[str, List[float]]) -> List[float]:
    columns = list(zip(*table.values()))
    return [(max(c) - min(c)) / max(c) if max(c) > 0 else 0.0 for c in columns]


def decay_persistence(
    builder: Callable[[int], PolyJet],
    windows: Sequence[int],
    gamma_fn: _Profile,
    m: int,
    r0: int,
    target: str = "linear",
    tolerance: float = 0.1,
) -> DecayPersistenceReport:
    """gamma(K_k) and gamma(D^k R(0)) for the same map built on several windows."""
    gamma_K: Dict[str, List[float]] = {}
    gamma_R: Dict[str, List[float]] = {}
    for L in windows:
        F = builder(L)
        seed = prepare_conjugacy(F, m, r0, target, gamma_fn)
        gamma_K[str(L)] = [ml_gamma(C, gamma_fn) for C in seed.normal_form.K.coefficients[1:]]
        gamma_R[str(L)] = derivative_gammas(seed.S0, gamma_fn)
        logger.info("window L=%d: gamma(K_k)=%s", L, ["%.4g" % v for v in gamma_K[str(L)]])
    report = DecayPersistenceReport(
        windows=list(windows), gamma_K=gamma_K, gamma_R=gamma_R,
        spread_K=_spread(gamma_K), spread_R=_spread(gamma_R), tolerance=tolerance,
    )
    if not report.stable:
        logger.warning("decay not stable across windows %s", list(windows))
    return report


def sample_ball(window: LatticeWindow, radius: float, count: int, seed: int) -> List[LatticeVector]:
    """Uniform samples of the node-wise sup ball of the given radius."""
    rng = np.random.default_rng(seed)
    return [LatticeVector(window, rng.uniform(-radius, radius, window.dim)) for _ in range(count)]
