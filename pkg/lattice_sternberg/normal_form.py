# lattice_sternberg/normal_form.py
"""
Order-by-order normal form: polynomial K, H with F o K - K o H = o(|x|^r),
K_1 = Id and H_1 = A. Orders outside the resonant set are removed by the
homological equation; resonant orders are kept in H unchanged.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import scipy.linalg
from pydantic import BaseModel

from lattice_sternberg import settings
from lattice_sternberg.decay import _Profile
from lattice_sternberg.errors import PreconditionViolated, ResonantOrder
from lattice_sternberg.jets import (
    PolyJet,
    identity_jet,
    jet_coefficient,
    jet_compose,
    jet_eval,
    jet_sub,
    jet_truncate,
)
from lattice_sternberg.lattice import LatticeVector, linear_inverse
from lattice_sternberg.multilinear import MultiLinearMap, left_compose
from lattice_sternberg.sparse import SparseTensor
from lattice_sternberg.sylvester import ResonanceSet, homological_condition, resonance_set, solve_homological

logger = logging.getLogger("lattice_sternberg.normal_form")

RESIDUAL_SCALES = (1e-1, 1e-2, 1e-3)


@dataclass
class NormalFormResult:
    K: PolyJet
    H: PolyJet
    resonances: ResonanceSet
    residual_jet: PolyJet
    gamma_K: List[Optional[float]] = field(default_factory=list)
    gamma_H: List[Optional[float]] = field(default_factory=list)
    conditions: Dict[int, float] = field(default_factory=dict)

    @property
    def order(self) -> int:
        return self.K.degree

    def residual_norms(self) -> List[float]:
        return [C.max_abs() for C in self.residual_jet.coefficients]

    def summary(self) -> dict:
        rows = []
        residuals = self.residual_norms()
        for k in range(2, self.order + 1):
            rows.append(
                {
                    "order": k,
                    "resonant": k in self.resonances.resonant_orders,
                    "gamma_K": self.gamma_K[k - 1] if self.gamma_K else None,
                    "gamma_H": self.gamma_H[k - 1] if self.gamma_H else None,
                    "max_abs_K": self.K.coefficient(k).max_abs(),
                    "max_abs_H": self.H.coefficient(k).max_abs(),
                    "residual": residuals[k - 1],
                    "condition": self.conditions.get(k),
                }
            )
        return {
            "order": self.order,
            "resonant_orders": list(self.resonances.resonant_orders),
            "orders": rows,
        }


class NormalFormResidualReport(BaseModel):
    order: int
    tol: float
    jet_residuals: List[float]
    sample_ratios: List[float]
    scales: List[float]
    scale_ratios: List[float]

    @property
    def jet_ok(self) -> bool:
        return all(v <= self.tol for v in self.jet_residuals)

    @property
    def trend_ok(self) -> bool:
        if len(self.scale_ratios) < 2:
            return True
        return self.scale_ratios[-1] <= self.scale_ratios[0] * (1.0 + 1e-6) + 1e-12


def compute_normal_form(
    F: PolyJet,
    r: int,
    tol: float = 1e-10,
    gamma_fn: Optional[_Profile] = None,
    resonance_tol: float = settings.RESONANCE_TOL,
    method: str = "direct",
) -> NormalFormResult:
    if r < 2:
        raise PreconditionViolated(f"normal form order must be >= 2, got {r}")
    window = F.window
    A = F.linear_part
    A_inv = linear_inverse(A, gamma_fn)
    eig = scipy.linalg.eigvals(A.dense())
    resonances = resonance_set(eig, r, resonance_tol)
    logger.info("normal form to order %d, resonant orders %s", r, resonances.resonant_orders or "none")

    K_coeffs: List[MultiLinearMap] = [identity_jet(window).coefficients[0]]
    H_coeffs: List[MultiLinearMap] = [F.coefficients[0]]
    conditions: Dict[int, float] = {}
    for k in range(2, r + 1):
        K_low = PolyJet(window, tuple(K_coeffs))
        H_low = PolyJet(window, tuple(H_coeffs))
        G = jet_coefficient(F, K_low, k) - jet_coefficient(K_low, H_low, k)
        if k in resonances.resonant_orders:
            H_coeffs.append(G)
            K_coeffs.append(MultiLinearMap.zeros(window, k))
            continue
        conditions[k] = homological_condition(A, k)
        if conditions[k] > 1e8:
            logger.warning("order %d homological system is ill-conditioned (%.3e)", k, conditions[k])
        try:
            K_k = solve_homological(A, left_compose(A_inv, G), method=method, tol=tol, gamma_fn=gamma_fn,
                                    resonance_tol=resonance_tol)
        except ResonantOrder as err:
            raise ResonantOrder(
                f"order {k} passed resonance detection but the homological solve is singular: {err.detail}",
                {**err.context, "resonance_tol": resonance_tol},
            ) from err
        K_coeffs.append(K_k)
        H_coeffs.append(MultiLinearMap.zeros(window, k))

    K = PolyJet.from_coefficients(window, K_coeffs)
    H = PolyJet.from_coefficients(window, H_coeffs)
    residual = jet_sub(jet_compose(F, K, r), jet_compose(K, H, r))
    result = NormalFormResult(K=K, H=H, resonances=resonances, residual_jet=residual, conditions=conditions)
    if gamma_fn is not None:
        result.gamma_K = K.gamma_table(gamma_fn)
        result.gamma_H = H.gamma_table(gamma_fn)
    worst = max(result.residual_norms())
    if worst > tol * max(1.0, max(C.max_abs() for C in K.coefficients)):
        logger.warning("normal form jet residual %.3e above tol %.1e", worst, tol)
    return result


def _composed_gap(F: PolyJet, K: PolyJet, H: PolyJet, x: LatticeVector) -> float:
    return (jet_eval(F, jet_eval(K, x)) - jet_eval(K, jet_eval(H, x))).norm()


def nf_residual(
    F: PolyJet,
    K: PolyJet,
    H: PolyJet,
    r: int,
    samples: Sequence[LatticeVector],
    tol: float = 1e-8,
) -> NormalFormResidualReport:
    """Jet residual of F o K - K o H through order r plus sampled |F o K - K o H| / |x|^r."""
    jet_res = jet_sub(jet_compose(F, K, r), jet_compose(K, H, r))
    ratios = []
    for x in samples:
        size = x.norm()
        if size > 0:
            ratios.append(_composed_gap(F, K, H, x) / size ** r)

    scale_ratios: List[float] = []
    direction = next((x for x in samples if x.norm() > 0), None)
    if direction is not None:
        unit = direction * (1.0 / direction.norm())
        scale_ratios = [_composed_gap(F, K, H, unit * t) / t ** r for t in RESIDUAL_SCALES]
    return NormalFormResidualReport(
        order=r,
        tol=tol,
        jet_residuals=[C.max_abs() for C in jet_truncate(jet_res, r).coefficients],
        sample_ratios=ratios,
        scales=list(RESIDUAL_SCALES) if direction is not None else [],
        scale_ratios=scale_ratios,
    )


def resonant_block(G: MultiLinearMap, A_eigenvalues: np.ndarray, tol: float = settings.RESONANCE_TOL) -> MultiLinearMap:
    """Part of G on monomials e_o <- e_j1 ... e_jk with eig_j1 ... eig_jk = eig_o (diagonal A only)."""
    k = G.arity
    eig = np.asarray(A_eigenvalues)
    if G.is_sparse:
        T = G.tensor
        keep = np.abs(np.prod(eig[T.coords[:, 1:]], axis=1) - eig[T.coords[:, 0]]) < tol
        return MultiLinearMap(G.window, SparseTensor(T.dim, T.coords[keep], T.data[keep]), G.symmetric)
    prod = np.ones((1,) * (k + 1), dtype=complex)
    for p in range(1, k + 1):
        shape = [1] * (k + 1)
        shape[p] = eig.size
        prod = prod * eig.reshape(shape)
    shape = [1] * (k + 1)
    shape[0] = eig.size
    mask = np.abs(prod - eig.reshape(shape)) < tol
    return MultiLinearMap(G.window, np.where(mask, G.tensor, 0.0), G.symmetric)
