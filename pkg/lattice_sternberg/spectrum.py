# lattice_sternberg/spectrum.py
"""
Gamma-spectrum numerics on truncated windows.

On a finite window the Gamma-spectrum collapses to the matrix spectrum, so the
decay structure is tracked through the Gamma-norm of resolvents (level sets)
and through their stability as the window grows.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel

from lattice_sternberg import settings
from lattice_sternberg.decay import LatticeWindow, _Profile
from lattice_sternberg.errors import (
    ContourTooClose,
    Overflow,
    PreconditionViolated,
    QuadratureStalled,
    Singular,
    ZeroLeadingCoefficient,
)
from lattice_sternberg.lattice import BlockLinearMap, gamma_norm, linear_inverse

logger = logging.getLogger("lattice_sternberg.spectrum")

MapBuilder = Callable[[int], BlockLinearMap]


# -------- reports --------
class GelfandEstimate(BaseModel):
    powers: List[int]
    values: List[float]
    running_infimum: List[float]
    radius: float
    truncated_spectral_radius: float


class SpectralReport(BaseModel):
    grid_re: List[float]
    grid_im: List[float]
    threshold: float
    windows: List[int]
    resolvent_norms: List[List[Optional[float]]]  # [window][lambda], None = singular
    growth: List[Optional[float]]
    classes: List[str]
    eigen_re: List[float]
    eigen_im: List[float]
    inclusion_violations: List[int]
    gelfand: Optional[GelfandEstimate] = None

    @property
    def inclusion_ok(self) -> bool:
        return not self.inclusion_violations

    def spectrum_points(self) -> List[complex]:
        return [complex(re, im) for re, im, c in zip(self.grid_re, self.grid_im, self.classes) if c == "spectrum"]

    def landscape_rows(self) -> List[Tuple[float, float, Optional[float], str]]:
        last = self.resolvent_norms[-1]
        return list(zip(self.grid_re, self.grid_im, last, self.classes))


class ProjectionReport(BaseModel):
    center: Tuple[float, float]
    radius: float
    quad_points: int
    rank: int
    idempotence: float
    commutation: float
    complement_defect: float


# -------- resolvents --------
def resolvent_gamma_norm(A: BlockLinearMap, lam: complex, gamma_fn: _Profile) -> float:
    shifted = A.dense().astype(complex) - lam * np.eye(A.window.dim)
    cond = np.linalg.cond(shifted)
    if not np.isfinite(cond) or cond > settings.SINGULAR_COND:
        raise Singular(f"A - lambda is singular at lambda={lam} (cond={cond:.3e})", {"lambda": str(lam)})
    return gamma_norm(BlockLinearMap(A.window, np.linalg.inv(shifted)), gamma_fn)


def _safe_resolvent(A: BlockLinearMap, lam: complex, gamma_fn: _Profile) -> Optional[float]:
    try:
        return resolvent_gamma_norm(A, lam, gamma_fn)
    except Singular:
        return None


def _probe_window(A: BlockLinearMap, grid: Sequence[complex], gamma_fn: _Profile) -> List[Optional[float]]:
    if settings.WORKERS == 1:
        return [_safe_resolvent(A, lam, gamma_fn) for lam in grid]
    with ThreadPoolExecutor(max_workers=settings.WORKERS) as pool:
        return list(pool.map(lambda lam: _safe_resolvent(A, lam, gamma_fn), grid))


def _grid_resolution(grid: np.ndarray) -> float:
    if grid.size < 2:
        return math.inf
    gaps = np.abs(grid[:, None] - grid[None, :])
    gaps[gaps == 0] = np.inf
    return float(gaps.min())


def gamma_spectrum_probe(
    A: Union[BlockLinearMap, MapBuilder],
    grid: Sequence[complex],
    threshold: float,
    gamma_fn: _Profile,
    windows: Optional[Sequence[int]] = None,
    stability: float = 0.5,
) -> SpectralReport:
    """
    Classify grid points as Gamma-resolvent candidates (resolvent Gamma-norm
    <= threshold on every window, growing by at most a factor 1 + stability)
    or Gamma-spectrum candidates.
    """
    if callable(A) and not isinstance(A, BlockLinearMap):
        if not windows:
            raise PreconditionViolated("a map builder needs an explicit window list")
        maps = [A(L) for L in windows]
    else:
        maps = [A]
        windows = [A.window.radius_L]
    points = np.asarray(list(grid), dtype=complex)

    norms = [_probe_window(M, points, gamma_fn) for M in maps]
    classes, growth = [], []
    for idx in range(points.size):
        column = [row[idx] for row in norms]
        if any(v is None for v in column):
            classes.append("spectrum")
            growth.append(None)
            continue
        lo, hi = min(column), max(column)
        ratio = hi / lo if lo > 0 else math.inf
        growth.append(ratio)
        stable = ratio <= 1.0 + stability
        classes.append("resolvent" if hi <= threshold and stable else "spectrum")
        if hi <= threshold and not stable:
            logger.warning("resolvent norm at %s grows by %.3g across windows %s", points[idx], ratio, list(windows))

    eig = np.linalg.eigvals(maps[-1].dense())
    violations = []
    resolution = _grid_resolution(points)
    for e_idx, mu in enumerate(eig):
        if points.size == 0:
            break
        nearest = int(np.argmin(np.abs(points - mu)))
        if abs(points[nearest] - mu) <= resolution and classes[nearest] == "resolvent":
            violations.append(e_idx)
    if violations:
        logger.warning("%d eigenvalues sit next to resolvent-classified grid points", len(violations))

    return SpectralReport(
        grid_re=points.real.tolist(),
        grid_im=points.imag.tolist(),
        threshold=threshold,
        windows=list(windows),
        resolvent_norms=norms,
        growth=growth,
        classes=classes,
        eigen_re=eig.real.tolist(),
        eigen_im=eig.imag.tolist(),
        inclusion_violations=violations,
    )


def stable_resolvent_radius(A: BlockLinearMap, mu: complex, gamma_fn: _Profile) -> float:
    """Perturbations B with ||B||_G below this keep ||(A+B-mu)^-1||_G <= 2 ||(A-mu)^-1||_G."""
    return 1.0 / (2.0 * resolvent_gamma_norm(A, mu, gamma_fn))


# -------- Gelfand radius --------
def gelfand_radius(A: BlockLinearMap, gamma_fn: _Profile, N_max: int = 128) -> GelfandEstimate:
    """Running infimum of ||A^N||_G^(1/N), N = 1, 2, 4, ... <= N_max, with log-scaled squaring."""
    if N_max < 2:
        raise PreconditionViolated(f"N_max must be >= 2, got {N_max}")
    power = np.array(A.dense(), dtype=complex if np.iscomplexobj(A.matrix) else float)
    log_scale = 0.0
    N = 1
    powers, values, running = [], [], []
    while N <= N_max:
        if not np.all(np.isfinite(power)) or not math.isfinite(log_scale):
            raise Overflow(f"power A^{N} left the float range")
        size = gamma_norm(BlockLinearMap(A.window, power), gamma_fn)
        value = 0.0 if size == 0.0 else math.exp((log_scale + math.log(size)) / N)
        powers.append(N)
        values.append(value)
        running.append(value if not running else min(running[-1], value))
        if size == 0.0:
            break
        peak = float(np.abs(power).max())
        power = power / peak
        log_scale += math.log(peak)
        power = power @ power
        log_scale *= 2.0
        N *= 2
    eig = np.linalg.eigvals(A.dense()) if A.window.dim else np.zeros(0)
    rho = float(np.abs(eig).max(initial=0.0))
    logger.debug("gelfand radius %.6f after N=%d (matrix spectral radius %.6f)", running[-1], powers[-1], rho)
    return GelfandEstimate(
        powers=powers, values=values, running_infimum=running, radius=running[-1], truncated_spectral_radius=rho
    )


def spectral_bounds(A: BlockLinearMap, gamma_fn: _Profile, N_max: int = 128) -> Tuple[float, float]:
    """(alpha_G, beta_G) with alpha_G^-1 = r_G(A^-1) and beta_G = r_G(A)."""
    beta = gelfand_radius(A, gamma_fn, N_max).radius
    inv_radius = gelfand_radius(linear_inverse(A, gamma_fn), gamma_fn, N_max).radius
    return 1.0 / inv_radius, beta


# -------- projections --------
def _trapezoid(A: BlockLinearMap, center: complex, radius: float, nodes: int) -> np.ndarray:
    dim = A.window.dim
    eye = np.eye(dim)
    mat = A.dense()
    total = np.zeros((dim, dim), dtype=complex)
    for k in range(nodes):
        w = radius * np.exp(2j * math.pi * k / nodes)
        total += w * np.linalg.inv((center + w) * eye - mat)
    return total / nodes


def spectral_projection(
    A: BlockLinearMap,
    gamma_fn: _Profile,
    center: complex,
    radius: float,
    quad_points: int = 16,
    max_points: int = 4096,
    tol: float = 1e-8,
    grid_resolution: float = 1e-3,
) -> BlockLinearMap:
    """(1 / 2 pi i) contour integral of (z - A)^-1 over a circle, trapezoid rule with node doubling."""
    eig = np.linalg.eigvals(A.dense())
    gap = float(np.abs(np.abs(eig - center) - radius).min(initial=math.inf))
    if gap < 10.0 * grid_resolution:
        raise ContourTooClose(
            f"contour |z-{center}|={radius} passes within {gap:.3e} of the spectrum",
            {"gap": gap, "required": 10.0 * grid_resolution},
        )
    nodes = quad_points
    current = _trapezoid(A, center, radius, nodes)
    while True:
        if 2 * nodes > max_points:
            raise QuadratureStalled(f"no convergence with {nodes} quadrature nodes", {"nodes": nodes})
        refined = _trapezoid(A, center, radius, 2 * nodes)
        change = gamma_norm(BlockLinearMap(A.window, refined - current), gamma_fn)
        nodes *= 2
        current = refined
        if change < tol:
            break
    P = BlockLinearMap(A.window, current)
    if not np.iscomplexobj(A.matrix) and abs(complex(center).imag) == 0.0:
        P = BlockLinearMap(A.window, current.real.copy())
    idem = gamma_norm(P @ P - P, gamma_fn)
    comm = gamma_norm(A @ P - P @ A, gamma_fn)
    if idem > tol or comm > tol:
        raise QuadratureStalled(
            f"projection checks failed (idempotence {idem:.3e}, commutation {comm:.3e})",
            {"idempotence": idem, "commutation": comm},
        )
    logger.debug("spectral projection converged with %d nodes", nodes)
    return P


def complementary_projection(P: BlockLinearMap) -> BlockLinearMap:
    return BlockLinearMap.identity(P.window) - P


def projection_report(
    A: BlockLinearMap, P: BlockLinearMap, Q: BlockLinearMap, gamma_fn: _Profile,
    center: complex, radius: float, quad_points: int,
) -> ProjectionReport:
    return ProjectionReport(
        center=(complex(center).real, complex(center).imag),
        radius=radius,
        quad_points=quad_points,
        rank=int(round(float(np.trace(P.dense()).real))),
        idempotence=gamma_norm(P @ P - P, gamma_fn),
        commutation=gamma_norm(A @ P - P @ A, gamma_fn),
        complement_defect=gamma_norm(P + Q - BlockLinearMap.identity(P.window), gamma_fn),
    )


def restricted_spectrum(A: BlockLinearMap, P: BlockLinearMap, rank_tol: float = 0.5) -> np.ndarray:
    """Eigenvalues of A on range(P)."""
    U, S, _ = np.linalg.svd(P.dense())
    basis = U[:, S > rank_tol]
    if basis.shape[1] == 0:
        return np.zeros(0, dtype=complex)
    return np.linalg.eigvals(basis.conj().T @ A.dense() @ basis)


# -------- band matrices --------
def band_coefficients(coeffs: Sequence[float], count: int) -> np.ndarray:
    """b_0..b_{count-1} with sum_k a_k b_{j-k} = delta_{j0}, b_j = 0 for j < 0."""
    a = [float(c) for c in coeffs]
    if not a or a[0] == 0.0:
        raise ZeroLeadingCoefficient("band operator needs a_0 != 0")
    b = np.zeros(count)
    for j in range(count):
        acc = 1.0 if j == 0 else 0.0
        for k in range(1, min(j, len(a) - 1) + 1):
            acc -= a[k] * b[j - k]
        b[j] = acc / a[0]
    return b


def _toeplitz_upper(values: np.ndarray, window: LatticeWindow) -> BlockLinearMap:
    s = window.size
    mat = np.zeros((s, s))
    for j, v in enumerate(values[:s]):
        if v != 0.0:
            mat += v * np.eye(s, k=j)
    return BlockLinearMap(window, mat)


def _check_band_window(window: LatticeWindow) -> None:
    if window.dim_m != 1 or window.node_dim_n != 1:
        raise PreconditionViolated("band operators are defined on one-dimensional scalar lattices")


def band_matrix(coeffs: Sequence[float], window: LatticeWindow) -> BlockLinearMap:
    """a_0 Id + a_1 S + ... + a_r S^r with (Sx)_i = x_{i+1}."""
    _check_band_window(window)
    return _toeplitz_upper(np.asarray(coeffs, dtype=float), window)


def band_matrix_inverse_oracle(coeffs: Sequence[float], window: LatticeWindow) -> BlockLinearMap:
    _check_band_window(window)
    return _toeplitz_upper(band_coefficients(coeffs, window.size), window)
