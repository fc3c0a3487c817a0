import numpy as np
import pytest

from lattice_sternberg.config import (
    BandConfig,
    CouplingConfig,
    ExperimentConfig,
    LinearConfig,
    build_decay,
    build_linear,
    build_map,
    load_config,
    map_builder,
)
from lattice_sternberg.decay import DecayFunction, LatticeWindow, TabulatedDecay
from lattice_sternberg.errors import ParseError, SchemaError

FIXTURES = ["scalar_quadratic", "linear_uncoupled", "resonant_diag", "coupled_quadratic"]


@pytest.mark.parametrize("name", FIXTURES)
def test_shipped_fixtures_load(fixture_config, name):
    config = fixture_config(name)
    assert isinstance(config, ExperimentConfig)
    assert config.name == name


def test_missing_file(tmp_path):
    with pytest.raises(ParseError) as exc:
        load_config(tmp_path / "absent.json")
    assert exc.value.exit_code == 2


def test_invalid_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{\"decay\": ")
    with pytest.raises(ParseError) as exc:
        load_config(path)
    assert exc.value.context["line"] == 1


def test_unknown_key_rejected(write_config):
    path = write_config("scalar_quadratic", run__shiny=True)
    with pytest.raises(SchemaError) as exc:
        load_config(path)
    assert exc.value.exit_code == 2
    assert exc.value.errors


@pytest.mark.parametrize(
    "overrides",
    [
        {"run__mode": "heuristic"},
        {"run__target": "cubic"},
        {"run__r": 9},
        {"decay__verify_window_L": 4},
        {"window__radius_L": -1},
        {"map__linear__node_block": [[0.5, 0.0], [0.0, 0.5]]},
    ],
)
def test_schema_violations(write_config, overrides):
    with pytest.raises(SchemaError):
        load_config(write_config("scalar_quadratic", **overrides))


def test_term_size_must_match_node_dimension(write_config):
    path = write_config("resonant_diag", map__terms=[{"order": 2, "node_local": [1.0, 0.0]}])
    with pytest.raises(SchemaError) as exc:
        load_config(path)
    assert any("node_local" in e["msg"] for e in exc.value.errors)


def test_probe_grid_on_real_axis(fixture_config):
    probe = fixture_config("linear_uncoupled").run.probe
    grid = probe.grid()
    assert len(grid) == 25
    assert grid[0] == complex(-0.2, 0.0)
    assert all(z.imag == 0.0 for z in grid)


def test_build_decay_variants(fixture_config):
    cfg = fixture_config("scalar_quadratic").decay
    searched = build_decay(cfg)
    assert isinstance(searched, DecayFunction)
    assert searched.certificate.passed

    fixed = build_decay(cfg.copy(update={"amplitude": 0.1}))
    assert fixed.amplitude_a == 0.1
    assert fixed.certificate is None

    table = build_decay(cfg.copy(update={"table": [0.3, 0.1]}))
    assert isinstance(table, TabulatedDecay)


def test_build_scalar_map(fixture_config, gamma_21):
    config = fixture_config("scalar_quadratic")
    F = build_map(config.map, config.window.window(), gamma_21)
    assert F.degree == 2
    assert F.coefficients[0].tensor.reshape(-1)[0] == 0.5
    assert F.coefficients[1].tensor.reshape(-1)[0] == 1.0


def test_band_coupling_follows_shift_convention(fixture_config, gamma_21):
    config = fixture_config("scalar_quadratic")
    linear = LinearConfig(
        node_block=config.map.linear.node_block,
        coupling=CouplingConfig(bands=[BandConfig(offset=[1], block=[[0.2]])]),
    )
    window = LatticeWindow(dim_m=1, radius_L=2)
    A = build_linear(linear, window, gamma_21)
    expected = 0.5 * np.eye(5) + 0.2 * np.eye(5, k=1)
    assert np.allclose(A.matrix, expected)


def test_coupled_terms_use_decay_profile(fixture_config, gamma_21):
    config = fixture_config("coupled_quadratic")
    window = LatticeWindow(dim_m=1, radius_L=2)
    term = config.map.terms[0].copy(update={"coupling_strength": 0.1})
    cfg_map = config.map.copy(update={"terms": [term]})
    F = build_map(cfg_map, window, gamma_21)
    W = F.coefficients[1].tensor
    assert W[2, 2, 2] == pytest.approx(1.0)
    assert W[2, 3, 3] == pytest.approx(0.1 * gamma_21(1))
    assert W[2, 2, 3] == 0.0
    A = F.linear_part.matrix
    assert A[0, 1] == pytest.approx(0.05 * gamma_21(1))


def test_map_builder_varies_window(fixture_config, gamma_21):
    config = fixture_config("coupled_quadratic")
    build = map_builder(config, gamma_21)
    assert build(2).window.radius_L == 2
    assert build(4).window.size == 9
