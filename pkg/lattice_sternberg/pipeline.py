# lattice_sternberg/pipeline.py
"""
Batch pipeline: decay -> norms -> spectrum -> nf -> conj.

Each requested stage writes report_<stage>.json into the output directory.
A library error stops the run at that stage; its report carries the error
record and the run returns the error family's exit code.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property, partial
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from lattice_sternberg import settings
from lattice_sternberg.adapters.tensor_io import write_jet, write_linear, write_report, write_rows
from lattice_sternberg.config import STAGES, ExperimentConfig, build_decay, map_builder
from lattice_sternberg.decay import LatticeWindow, _Profile, verify_decay
from lattice_sternberg.errors import AcceptanceFailed, LatticeError, NumericalError
from lattice_sternberg.jets import PolyJet
from lattice_sternberg.lattice import gamma, gamma_norm, norm_mode, op_norm
from lattice_sternberg.multilinear import ml_gamma, ml_op_norm
from lattice_sternberg.normal_form import NormalFormResult, compute_normal_form, nf_residual
from lattice_sternberg.spectrum import (
    complementary_projection,
    gamma_spectrum_probe,
    gelfand_radius,
    projection_report,
    restricted_spectrum,
    spectral_projection,
)
from lattice_sternberg.sternberg import (
    ConjugacySeed,
    SternbergConfig,
    configure,
    conjugacy_residual,
    conjugacy_trace,
    decay_persistence,
    prepare_conjugacy,
    s0_defect,
    sample_ball,
)
from lattice_sternberg.sylvester import detect_resonances

logger = logging.getLogger("lattice_sternberg.pipeline")

NF_SAMPLE_RADIUS = 0.1


@dataclass
class PipelineState:
    config: ExperimentConfig
    out_dir: Path
    seed: int
    window_scale: int = 1
    results: Dict[str, Dict[str, Any]] = field(default_factory=dict)

    @cached_property
    def gamma_fn(self) -> _Profile:
        return build_decay(self.config.decay)

    @cached_property
    def window(self) -> LatticeWindow:
        return self.config.window.window(self.window_scale)

    @cached_property
    def builder(self) -> Callable[[int], PolyJet]:
        return map_builder(self.config, self.gamma_fn)

    @cached_property
    def F(self) -> PolyJet:
        return self.builder(self.window.radius_L)

    @cached_property
    def normal_form(self) -> NormalFormResult:
        run = self.config.run
        return compute_normal_form(self.F, run.r, tol=run.tol, gamma_fn=self.gamma_fn,
                                   resonance_tol=run.resonance_tol, method=run.homological_method)

    @cached_property
    def sternberg(self) -> SternbergConfig:
        return configure(self.F, self.gamma_fn, self.config.run.mode)

    @cached_property
    def conjugacy_seed(self) -> ConjugacySeed:
        run = self.config.run
        return prepare_conjugacy(self.F, self.sternberg.m, self.sternberg.r0, run.target, self.gamma_fn,
                                 tol=run.tol, resonance_tol=run.resonance_tol)

    def compare_windows(self) -> List[int]:
        explicit = self.config.run.compare_windows
        if explicit:
            return [L * self.window_scale for L in explicit]
        L = self.window.radius_L
        return [L, 2 * L] if L > 0 else []


# -------- stages --------
def stage_decay(state: PipelineState) -> Dict[str, Any]:
    report = verify_decay(state.gamma_fn, state.config.decay.verify_window_L)
    return {
        "profile": state.gamma_fn.dict(exclude={"certificate"}),
        "gamma0": state.gamma_fn.gamma0,
        "verification": report.record(),
        "passed": report.passed,
    }


def stage_norms(state: PipelineState) -> Dict[str, Any]:
    A = state.F.linear_part
    gamma_fn = state.gamma_fn
    write_linear(A, state.out_dir / "tensors", "linear_part", decay=gamma_fn)
    write_jet(state.F, state.out_dir / "jet_F")
    return {
        "window": state.window.dict(),
        "norm_mode": norm_mode(state.window),
        "linear": {"op_norm": op_norm(A), "gamma": gamma(A, gamma_fn), "gamma_norm": gamma_norm(A, gamma_fn)},
        "coefficients": [
            {"order": k, "op_norm": ml_op_norm(C), "gamma": ml_gamma(C, gamma_fn)}
            for k, C in enumerate(state.F.coefficients, start=1)
        ],
    }


def stage_spectrum(state: PipelineState) -> Dict[str, Any]:
    run = state.config.run
    A = state.F.linear_part
    gamma_fn = state.gamma_fn
    eig = np.linalg.eigvals(A.dense())
    payload: Dict[str, Any] = {
        "eigen_re": eig.real.tolist(),
        "eigen_im": eig.imag.tolist(),
        "gelfand": gelfand_radius(A, gamma_fn).dict(),
    }
    moduli = np.abs(eig)
    if moduli.size and (moduli.max() >= 1.0 or moduli.min() == 0.0):
        reason = f"spectrum moduli [{moduli.min():.6g}, {moduli.max():.6g}] are not inside (0, 1)"
        logger.warning("resonance detection skipped: %s", reason)
        payload["resonances"] = None
        payload["resonances_skipped"] = reason
    else:
        payload["resonances"] = detect_resonances(eig, run.r, run.resonance_tol).dict()
    if run.probe is not None:
        windows = run.probe.windows or [state.window.radius_L]
        probe = gamma_spectrum_probe(
            lambda L: state.builder(L).linear_part, run.probe.grid(), run.probe.threshold, gamma_fn,
            windows=[L * state.window_scale for L in windows],
        )
        write_rows(state.out_dir / "landscape.csv", ["re", "im", "resolvent_gamma_norm", "class"],
                   probe.landscape_rows())
        payload["probe"] = probe.dict()
    if run.projection is not None:
        proj = run.projection
        center = complex(proj.center_re, proj.center_im)
        P = spectral_projection(A, gamma_fn, center, proj.radius, quad_points=proj.quad_points)
        Q = complementary_projection(P)
        report = projection_report(A, P, Q, gamma_fn, center, proj.radius, proj.quad_points)
        inside, outside = restricted_spectrum(A, P), restricted_spectrum(A, Q)
        payload["projection"] = report.dict()
        payload["projection"]["restricted_inside"] = [[z.real, z.imag] for z in inside]
        payload["projection"]["restricted_outside"] = [[z.real, z.imag] for z in outside]
        payload["projection_defect"] = max(report.idempotence, report.commutation, report.complement_defect)
    return payload


def stage_nf(state: PipelineState) -> Dict[str, Any]:
    run = state.config.run
    nf = state.normal_form
    samples = sample_ball(state.window, NF_SAMPLE_RADIUS, min(run.samples, 20), state.seed)
    residual = nf_residual(state.F, nf.K, nf.H, run.r, samples, tol=max(run.tol, 1e-8))
    write_jet(nf.K, state.out_dir / "jet_K")
    write_jet(nf.H, state.out_dir / "jet_H")
    return {
        "summary": nf.summary(),
        "residual": residual.dict(),
        "jet_ok": residual.jet_ok,
        "trend_ok": residual.trend_ok,
        "jet_residual_max": max(residual.jet_residuals),
    }


def stage_conj(state: PipelineState) -> Dict[str, Any]:
    run = state.config.run
    sc = state.sternberg
    seed = state.conjugacy_seed
    R_eval = partial(conjugacy_trace, state.F, seed.target, seed.S0, sc.m, N_max=run.N_max, delta=sc.delta)
    samples = sample_ball(state.window, sc.certified_radius, run.samples, state.seed)
    report = conjugacy_residual(
        state.F, seed.target, R_eval, samples, sc.m,
        S0=seed.S0, r0=sc.r0, contraction=sc.contraction_factor, gamma_fn=state.gamma_fn,
        certified_radius=sc.certified_radius,
    )
    write_jet(seed.S0, state.out_dir / "jet_S0")
    write_rows(
        state.out_dir / "conjugacy_samples.csv",
        ["sample", "norm", "residual", "iterations"],
        [(i, x.norm(), r, it) for i, (x, r, it) in enumerate(zip(samples, report.residuals, report.iterations))],
    )
    payload: Dict[str, Any] = {
        "parameters": sc.dict(),
        "target": run.target,
        "resonant_orders": seed.normal_form.resonances.resonant_orders,
        "s0_defect": s0_defect(state.F, seed.target, seed.S0, sc.m, sc.r0),
        "conjugacy": report.dict(),
    }
    windows = state.compare_windows()
    if len(windows) >= 2:
        persistence = decay_persistence(state.builder, windows, state.gamma_fn, sc.m, sc.r0, run.target)
        payload["decay_persistence"] = persistence.dict()
        payload["decay_persistence"]["stable"] = persistence.stable
    return payload


STAGE_FUNCS: Dict[str, Callable[[PipelineState], Dict[str, Any]]] = {
    "decay": stage_decay,
    "norms": stage_norms,
    "spectrum": stage_spectrum,
    "nf": stage_nf,
    "conj": stage_conj,
}


# -------- acceptance --------
def acceptance_checks(state: PipelineState) -> List[Dict[str, Any]]:
    limits = state.config.run.acceptance
    checks = []

    def check(name: str, value: Optional[float], limit: Optional[float]) -> None:
        if limit is not None and value is not None:
            checks.append({"check": name, "value": value, "limit": limit, "passed": value <= limit})

    decay = state.results.get("decay")
    if decay is not None:
        checks.append({"check": "decay_verified", "value": None, "limit": None, "passed": decay["passed"]})
    if "conj" in state.results:
        check("max_conjugacy_residual", state.results["conj"]["conjugacy"]["residual_max"],
              limits.max_conjugacy_residual)
    if "nf" in state.results:
        check("max_jet_residual", state.results["nf"]["jet_residual_max"], limits.max_jet_residual)
    if "spectrum" in state.results:
        check("max_projection_defect", state.results["spectrum"].get("projection_defect"),
              limits.max_projection_defect)
    return checks


def run_pipeline(
    config: ExperimentConfig,
    stages: Optional[Sequence[str]] = None,
    out_dir: Optional[Path] = None,
    seed_override: Optional[int] = None,
    window_scale: int = 1,
) -> int:
    """Runs the requested stages in pipeline order; returns the exit code."""
    requested = set(stages or STAGES)
    unknown = requested - set(STAGES)
    if unknown:
        raise ValueError(f"unknown stages {sorted(unknown)}")
    state = PipelineState(
        config=config,
        out_dir=Path(out_dir or settings.OUT_DIR),
        seed=config.run.seed if seed_override is None else seed_override,
        window_scale=window_scale,
    )
    state.out_dir.mkdir(parents=True, exist_ok=True)

    for stage in STAGES:
        if stage not in requested:
            continue
        logger.info("stage %s: start", stage)
        failure: Optional[LatticeError] = None
        try:
            payload = STAGE_FUNCS[stage](state)
        except LatticeError as err:
            failure = err
        except (np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
            failure = NumericalError(f"stage {stage}: {type(exc).__name__}: {exc}", {"exception": type(exc).__name__})
        if failure is not None:
            logger.error("stage %s failed: %s", stage, failure.detail)
            write_report(state.out_dir / f"report_{stage}.json",
                         {"stage": stage, "status": "error", "config": config.name, **failure.to_dict()})
            return failure.exit_code
        state.results[stage] = payload
        write_report(state.out_dir / f"report_{stage}.json",
                     {"stage": stage, "status": "ok", "config": config.name, **payload})
        logger.info("stage %s: done", stage)

    checks = acceptance_checks(state)
    failed = [c["check"] for c in checks if not c["passed"]]
    write_report(state.out_dir / "report_acceptance.json", {"checks": checks, "passed": not failed})
    if failed:
        err = AcceptanceFailed(f"acceptance checks failed: {', '.join(failed)}", {"failed": failed})
        logger.error(err.detail)
        return err.exit_code
    return 0
