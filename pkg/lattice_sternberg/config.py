# lattice_sternberg/config.py
"""
Experiment configuration: one JSON file validated by pydantic, plus the
builders that turn it into a decay function and a polynomial lattice map.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Callable, Dict, List, Optional, Union

import numpy as np
import scipy.sparse
from pydantic import BaseModel, Extra, Field, ValidationError, root_validator, validator

from lattice_sternberg import settings
from lattice_sternberg.decay import LATTICE_NORMS, DecayFunction, LatticeWindow, TabulatedDecay, _Profile, make_power_exp_decay
from lattice_sternberg.errors import ParseError, SchemaError, WindowMismatch
from lattice_sternberg.jets import PolyJet
from lattice_sternberg.lattice import BlockLinearMap
from lattice_sternberg.multilinear import MAX_ARITY, MultiLinearMap

logger = logging.getLogger("lattice_sternberg.config")

STAGES = ("decay", "norms", "spectrum", "nf", "conj")


class _Strict(BaseModel):
    class Config:
        extra = Extra.forbid


# -------- decay / window --------
class DecayConfig(_Strict):
    alpha: float = Field(..., gt=0)
    theta: float = Field(0.0, ge=0)
    dim_m: int = Field(1, gt=0)
    verify_window_L: int = Field(50, ge=8)
    amplitude: Optional[float] = Field(None, gt=0)  # fixed a; searched when absent
    table: Optional[List[float]] = None  # tabulated radial profile instead of power-exp
    lattice_norm: str = settings.LATTICE_NORM

    @validator("lattice_norm")
    def known_norm(cls, v):
        if v not in LATTICE_NORMS:
            raise ValueError(f"lattice_norm must be one of {LATTICE_NORMS}")
        return v

    @validator("table")
    def positive_table(cls, v):
        if v is not None and (not v or any(x < 0 for x in v) or v[0] <= 0):
            raise ValueError("table needs a positive first entry and no negative entries")
        return v


class WindowConfig(_Strict):
    dim_m: int = Field(1, gt=0)
    radius_L: int = Field(..., ge=0)
    node_dim_n: int = Field(1, gt=0)

    def window(self, scale: int = 1) -> LatticeWindow:
        return LatticeWindow(dim_m=self.dim_m, radius_L=self.radius_L * scale, node_dim_n=self.node_dim_n)


# -------- map --------
class BandConfig(_Strict):
    offset: List[int]
    block: List[List[float]]


class CouplingConfig(_Strict):
    strength: float = 0.0
    profile: str = "decay"
    block: Optional[List[List[float]]] = None
    bands: List[BandConfig] = []

    @validator("profile")
    def known_profile(cls, v):
        if v not in ("decay", "none"):
            raise ValueError("coupling profile must be 'decay' or 'none'")
        return v


class LinearConfig(_Strict):
    node_block: List[List[float]]
    coupling: CouplingConfig = CouplingConfig()


class PolyTermConfig(_Strict):
    order: int = Field(..., ge=2, le=MAX_ARITY)
    node_local: List[float]
    coupling_strength: float = 0.0


class MapConfig(_Strict):
    linear: LinearConfig
    terms: List[PolyTermConfig] = []


# -------- run --------
class ProbeConfig(_Strict):
    re_min: float = -1.0
    re_max: float = 1.0
    im_min: float = -1.0
    im_max: float = 1.0
    points: int = Field(21, ge=2)
    threshold: float = Field(1e3, gt=0)
    windows: Optional[List[int]] = None

    def grid(self) -> List[complex]:
        re = np.linspace(self.re_min, self.re_max, self.points)
        im = np.linspace(self.im_min, self.im_max, self.points) if self.im_max > self.im_min else np.zeros(1)
        return [complex(a, b) for b in im for a in re]


class ProjectionConfig(_Strict):
    center_re: float
    center_im: float = 0.0
    radius: float = Field(..., gt=0)
    quad_points: int = Field(16, ge=4)


class AcceptanceConfig(_Strict):
    max_conjugacy_residual: Optional[float] = None
    max_jet_residual: Optional[float] = None
    max_projection_defect: Optional[float] = None


class RunConfig(_Strict):
    mode: str = "perturbative"
    target: str = "linear"
    r: int = Field(2, ge=2, le=MAX_ARITY)
    tol: float = Field(1e-10, gt=0)
    samples: int = Field(100, ge=0)
    seed: int = 0
    resonance_tol: float = Field(settings.RESONANCE_TOL, gt=0)
    homological_method: str = "direct"
    N_max: int = Field(200, ge=1)
    probe: Optional[ProbeConfig] = None
    projection: Optional[ProjectionConfig] = None
    compare_windows: Optional[List[int]] = None
    acceptance: AcceptanceConfig = AcceptanceConfig()

    @validator("mode")
    def known_mode(cls, v):
        if v not in ("perturbative", "spectral"):
            raise ValueError("mode must be 'perturbative' or 'spectral'")
        return v

    @validator("target")
    def known_target(cls, v):
        if v not in ("linear", "normal_form"):
            raise ValueError("target must be 'linear' or 'normal_form'")
        return v

    @validator("homological_method")
    def known_method(cls, v):
        if v not in ("direct", "neumann"):
            raise ValueError("homological_method must be 'direct' or 'neumann'")
        return v


class ExperimentConfig(_Strict):
    name: str = "experiment"
    decay: DecayConfig
    window: WindowConfig
    map: MapConfig
    run: RunConfig = RunConfig()

    @root_validator(skip_on_failure=True)
    def shapes_agree(cls, values):
        decay, window, fmap = values["decay"], values["window"], values["map"]
        n = window.node_dim_n
        if decay.dim_m != window.dim_m:
            raise ValueError(f"decay dim_m={decay.dim_m} differs from window dim_m={window.dim_m}")
        if np.shape(fmap.linear.node_block) != (n, n):
            raise ValueError(f"linear.node_block must be {n}x{n}")
        if fmap.linear.coupling.block is not None and np.shape(fmap.linear.coupling.block) != (n, n):
            raise ValueError(f"linear.coupling.block must be {n}x{n}")
        for band in fmap.linear.coupling.bands:
            if len(band.offset) != window.dim_m or np.shape(band.block) != (n, n):
                raise ValueError(f"band offsets need {window.dim_m} entries and {n}x{n} blocks")
        for term in fmap.terms:
            expected = n ** (term.order + 1)
            if len(term.node_local) != expected:
                raise ValueError(f"order {term.order} term needs {expected} node_local entries, got {len(term.node_local)}")
        return values


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError as e:
        raise ParseError(f"config file not found: {path}", {"path": str(path)}) from e
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON in {path}: {e.msg} (line {e.lineno}, column {e.colno})",
                         {"path": str(path), "line": e.lineno, "column": e.colno}) from e
    try:
        config = ExperimentConfig.parse_obj(raw)
    except ValidationError as e:
        raise SchemaError(f"{path}: {len(e.errors())} schema error(s)", e.errors()) from e
    logger.info("loaded config %s (%s)", path, config.name)
    return config


# -------- builders --------
def build_decay(cfg: DecayConfig) -> _Profile:
    if cfg.table is not None:
        return TabulatedDecay(dim_m=cfg.dim_m, lattice_norm=cfg.lattice_norm, values=cfg.table)
    if cfg.amplitude is not None:
        return DecayFunction(dim_m=cfg.dim_m, lattice_norm=cfg.lattice_norm, alpha=cfg.alpha,
                             theta=cfg.theta, amplitude_a=cfg.amplitude)
    return make_power_exp_decay(cfg.alpha, cfg.theta, cfg.dim_m, cfg.verify_window_L, cfg.lattice_norm)


def _band_matrix(window: LatticeWindow, bands: List[BandConfig]) -> scipy.sparse.coo_matrix:
    """x'_i += block . x_{i + offset} for every window node with i + offset inside."""
    n = window.node_dim_n
    local = np.arange(n)
    rows, cols, vals = [], [], []
    offsets = window.offsets
    for band in bands:
        block = np.asarray(band.block, dtype=float)
        for i, node in enumerate(offsets):
            target = tuple(int(c) for c in node + np.asarray(band.offset))
            if max(abs(c) for c in target) > window.radius_L:
                continue
            j = window.index_of(target)
            rows.append(np.repeat(i * n + local, n))
            cols.append(np.tile(j * n + local, n))
            vals.append(block.reshape(-1))
    if not vals:
        return scipy.sparse.coo_matrix((window.dim, window.dim))
    return scipy.sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(window.dim, window.dim)
    )


def build_linear(cfg: LinearConfig, window: LatticeWindow, gamma_fn: _Profile) -> BlockLinearMap:
    coupling = cfg.coupling
    if coupling.profile == "decay" and coupling.strength:
        A = BlockLinearMap.coupled(window, cfg.node_block, gamma_fn, coupling.strength, coupling.block)
    else:
        A = BlockLinearMap.uncoupled(window, cfg.node_block)
    if coupling.bands:
        A = A + BlockLinearMap(window, _band_matrix(window, coupling.bands))
    return A


def _term_profile(window: LatticeWindow, gamma_fn: _Profile, strength: float) -> np.ndarray:
    profile = strength * np.array(gamma_fn.matrix(window))
    np.fill_diagonal(profile, 1.0)
    return profile


def build_map(cfg: MapConfig, window: LatticeWindow, gamma_fn: _Profile) -> PolyJet:
    """F(x) = A x + sum over terms of W_k x^(k), W_k node-local plus Gamma-profile couplings."""
    if window.node_dim_n != len(cfg.linear.node_block):
        raise WindowMismatch(f"node block size {len(cfg.linear.node_block)} != n={window.node_dim_n}")
    A = build_linear(cfg.linear, window, gamma_fn)
    degree = max([1] + [t.order for t in cfg.terms])
    coeffs: Dict[int, MultiLinearMap] = {1: MultiLinearMap.from_linear(A)}
    for term in cfg.terms:
        W = MultiLinearMap.from_profile(window, _term_profile(window, gamma_fn, term.coupling_strength),
                                        term.node_local, term.order)
        coeffs[term.order] = coeffs[term.order] + W if term.order in coeffs else W
    ordered = [coeffs.get(k, MultiLinearMap.zeros(window, k)) for k in range(1, degree + 1)]
    return PolyJet.from_coefficients(window, ordered)


def map_builder(config: ExperimentConfig, gamma_fn: _Profile) -> Callable[[int], PolyJet]:
    """radius L -> the configured map on the window of that radius."""
    base = config.window.window()

    def build(radius_L: int) -> PolyJet:
        return build_map(config.map, base.with_radius(radius_L), gamma_fn)

    return build
