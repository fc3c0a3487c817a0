import json

import numpy as np
import pytest

from lattice_sternberg import pipeline
from lattice_sternberg.cli import build_parser, main
from lattice_sternberg.config import load_config
from lattice_sternberg.pipeline import run_pipeline


def _report(out_dir, stage):
    return json.loads((out_dir / f"report_{stage}.json").read_text())


def test_scalar_fixture_full_pipeline(tmp_path, fixture_config):
    code = run_pipeline(fixture_config("scalar_quadratic"), out_dir=tmp_path)
    assert code == 0
    for stage in ("decay", "norms", "spectrum", "nf", "conj"):
        assert _report(tmp_path, stage)["status"] == "ok"

    conj = _report(tmp_path, "conj")
    assert conj["conjugacy"]["residual_max"] <= 1e-6
    assert conj["conjugacy"]["samples"] == 100
    assert max(conj["s0_defect"]) <= 1e-10
    assert conj["parameters"]["r0"] == 2
    assert _report(tmp_path, "nf")["jet_residual_max"] <= 1e-8
    assert _report(tmp_path, "acceptance")["passed"]
    assert (tmp_path / "jet_S0" / "manifest.json").exists()
    assert (tmp_path / "conjugacy_samples.csv").exists()


def test_linear_fixture_gives_identity_conjugacy(tmp_path, fixture_config):
    code = run_pipeline(fixture_config("linear_uncoupled"), out_dir=tmp_path)
    assert code == 0
    conj = _report(tmp_path, "conj")
    assert conj["conjugacy"]["residual_max"] <= 1e-12
    assert conj["decay_persistence"]["windows"] == [3, 6]
    spectrum = _report(tmp_path, "spectrum")
    assert spectrum["projection_defect"] <= 1e-8
    assert spectrum["projection"]["rank"] == 7
    assert spectrum["resonances"]["resonant_orders"] == []
    assert (tmp_path / "landscape.csv").read_text().splitlines()[0] == "re,im,resolvent_gamma_norm,class"


def test_resonant_fixture_stops_at_conjugacy(tmp_path, fixture_config):
    code = run_pipeline(fixture_config("resonant_diag"), out_dir=tmp_path)
    assert code == 3
    assert _report(tmp_path, "nf")["summary"]["resonant_orders"] == [2]
    conj = _report(tmp_path, "conj")
    assert conj["status"] == "error"
    assert conj["error"] == "ResonantOrder"
    assert conj["family"] == "PreconditionError"
    assert not (tmp_path / "report_acceptance.json").exists()


def test_resonant_fixture_with_normal_form_target(tmp_path, write_config):
    config = load_config(write_config("resonant_diag", run__target="normal_form"))
    assert run_pipeline(config, stages=["conj"], out_dir=tmp_path) == 0
    conj = _report(tmp_path, "conj")
    assert conj["target"] == "normal_form"
    assert conj["conjugacy"]["residual_max"] <= 1e-10


def test_coupled_fixture_conjugacy(tmp_path, fixture_config):
    code = run_pipeline(fixture_config("coupled_quadratic"), stages=["nf", "conj"], out_dir=tmp_path)
    assert code == 0
    conj = _report(tmp_path, "conj")
    assert conj["conjugacy"]["residual_max"] <= 1e-6
    assert conj["conjugacy"]["geometric_ok"]
    assert max(conj["conjugacy"]["jet_agreement"]) <= 1e-8
    assert conj["decay_persistence"]["stable"]


def test_failed_acceptance_returns_numerical_code(tmp_path, write_config):
    config = load_config(write_config("scalar_quadratic", run__acceptance__max_jet_residual=-1.0))
    assert run_pipeline(config, stages=["nf"], out_dir=tmp_path) == 4
    acceptance = _report(tmp_path, "acceptance")
    assert not acceptance["passed"]
    assert [c["check"] for c in acceptance["checks"] if not c["passed"]] == ["max_jet_residual"]


def test_seed_override_changes_samples(tmp_path, fixture_config):
    config = fixture_config("scalar_quadratic")
    run_pipeline(config, stages=["conj"], out_dir=tmp_path / "a", seed_override=1)
    run_pipeline(config, stages=["conj"], out_dir=tmp_path / "b", seed_override=2)
    first = (tmp_path / "a" / "conjugacy_samples.csv").read_text()
    second = (tmp_path / "b" / "conjugacy_samples.csv").read_text()
    assert first != second


def test_unknown_stage_rejected(tmp_path, fixture_config):
    with pytest.raises(ValueError):
        run_pipeline(fixture_config("scalar_quadratic"), stages=["plot"], out_dir=tmp_path)


def test_cli_runs_selected_stage(tmp_path, fixture_path):
    code = main(["run", str(fixture_path("linear_uncoupled")), "--stage", "decay", "--stage", "norms",
                 "--out-dir", str(tmp_path), "--window-scale", "2"])
    assert code == 0
    assert _report(tmp_path, "decay")["passed"]
    assert _report(tmp_path, "norms")["window"]["radius_L"] == 6
    assert not (tmp_path / "report_conj.json").exists()


def test_cli_rejects_bad_config(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2")
    assert main(["run", str(bad), "--out-dir", str(tmp_path)]) == 2
    report = _report(tmp_path, "config")
    assert report["error"] == "ParseError"
    assert report["exit_code"] == 2


def test_cli_rejects_bad_window_scale(tmp_path, fixture_path):
    assert main(["run", str(fixture_path("scalar_quadratic")), "--out-dir", str(tmp_path), "--window-scale", "0"]) == 2
    report = _report(tmp_path, "config")
    assert report["error"] == "ConfigError"
    assert report["context"] == {"window_scale": 0}


def test_parser_defaults(fixture_path):
    args = build_parser().parse_args(["run", str(fixture_path("scalar_quadratic"))])
    assert args.stages is None
    assert args.window_scale == 1
    with pytest.raises(SystemExit):
        build_parser().parse_args(["run", "x.json", "--stage", "plot"])


def test_spectrum_stage_outside_unit_disk_skips_resonances(tmp_path, write_config):
    config = load_config(write_config("coupled_quadratic", map__linear__node_block=[[1.5]]))
    assert run_pipeline(config, stages=["spectrum"], out_dir=tmp_path) == 0
    spectrum = _report(tmp_path, "spectrum")
    assert spectrum["status"] == "ok"
    assert spectrum["resonances"] is None
    assert "(0, 1)" in spectrum["resonances_skipped"]
    assert max(spectrum["eigen_re"]) > 1.0


def test_linear_algebra_failure_becomes_numerical_error(tmp_path, fixture_config, monkeypatch):
    def singular(*args, **kwargs):
        raise np.linalg.LinAlgError("Singular matrix")

    monkeypatch.setattr(pipeline, "gelfand_radius", singular)
    assert run_pipeline(fixture_config("scalar_quadratic"), stages=["spectrum"], out_dir=tmp_path) == 4
    report = _report(tmp_path, "spectrum")
    assert report["status"] == "error"
    assert report["error"] == "NumericalError"
    assert report["family"] == "NumericalError"
    assert report["context"] == {"exception": "LinAlgError"}


def test_reports_are_reproducible_apart_from_timestamp(tmp_path, fixture_config):
    config = fixture_config("scalar_quadratic")
    assert run_pipeline(config, out_dir=tmp_path / "a") == 0
    assert run_pipeline(config, out_dir=tmp_path / "b") == 0
    names = sorted(p.name for p in (tmp_path / "a").glob("report_*.json"))
    assert names == sorted(p.name for p in (tmp_path / "b").glob("report_*.json"))
    for name in names:
        first, second = [
            [line for line in (tmp_path / d / name).read_text().splitlines() if '"generated_at"' not in line]
            for d in ("a", "b")
        ]
        assert first == second, name
    assert (tmp_path / "a" / "conjugacy_samples.csv").read_bytes() == (tmp_path / "b" / "conjugacy_samples.csv").read_bytes()
