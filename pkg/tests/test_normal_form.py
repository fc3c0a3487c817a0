import numpy as np
import pytest

from conftest import random_coupled_quadratic, scalar_map
from lattice_sternberg.config import build_decay, build_map
from lattice_sternberg.decay import LatticeWindow
from lattice_sternberg.errors import PreconditionViolated
from lattice_sternberg.jets import jet_coefficient, jet_eval, linear_jet
from lattice_sternberg.lattice import LatticeVector
from lattice_sternberg.multilinear import MultiLinearMap
from lattice_sternberg.normal_form import compute_normal_form, nf_residual, resonant_block


def _first(C):
    return float(C.tensor.reshape(-1)[0])


def test_scalar_second_order_coefficient(scalar_quadratic):
    result = compute_normal_form(scalar_quadratic, 2)
    assert _first(result.K.coefficient(2)) == pytest.approx(-4.0, abs=1e-12)
    assert result.H.coefficient(2).max_abs() == 0.0
    assert max(result.residual_norms()) <= 1e-12
    assert result.resonances.is_empty


def test_scalar_third_order_residual():
    F = scalar_map(0.5, 1.0)
    result = compute_normal_form(F, 4)
    assert result.order == 4
    assert max(result.residual_norms()) <= 1e-10
    for k in range(2, 5):
        assert result.H.coefficient(k).max_abs() == 0.0


def test_coupled_random_maps_have_small_residual(gamma_21):
    rng = np.random.default_rng(0)
    for L in (1, 2, 4):
        window = LatticeWindow(dim_m=1, radius_L=L)
        F = random_coupled_quadratic(rng, window, gamma_21, lam=rng.uniform(0.3, 0.7))
        result = compute_normal_form(F, 3, gamma_fn=gamma_21)
        assert max(result.residual_norms()) <= 1e-8
        assert len(result.gamma_K) == 3
        assert result.gamma_K[0] == pytest.approx(1.0 / gamma_21.gamma0)
        assert set(result.conditions) == {2, 3}


def test_resonant_fixture_keeps_resonant_block(fixture_config):
    config = fixture_config("resonant_diag")
    gamma_fn = build_decay(config.decay)
    F = build_map(config.map, config.window.window(), gamma_fn)
    result = compute_normal_form(F, 3, tol=1e-10, gamma_fn=gamma_fn)

    assert result.resonances.resonant_orders == [2]
    G2 = jet_coefficient(F, linear_jet(result.K.linear_part), 2)
    block = resonant_block(G2, np.array([0.5, 0.25]))
    assert np.allclose(result.H.coefficient(2).tensor, block.tensor, atol=1e-10)
    assert result.K.coefficient(2).max_abs() == 0.0
    assert max(result.residual_norms()) <= 1e-10

    summary = result.summary()
    assert summary["resonant_orders"] == [2]
    assert [row["resonant"] for row in summary["orders"]] == [True, False]


def test_resonant_block_masks_nonresonant_monomials():
    window = LatticeWindow(dim_m=1, radius_L=0, node_dim_n=2)
    W = np.zeros((2, 2, 2))
    W[0, 0, 0] = 2.0
    W[1, 0, 0] = 1.0
    block = resonant_block(MultiLinearMap(window, W, symmetric=True), np.array([0.5, 0.25]))
    assert block.tensor[1, 0, 0] == 1.0
    assert block.tensor[0, 0, 0] == 0.0


def test_nf_residual_reports(scalar_quadratic):
    result = compute_normal_form(scalar_quadratic, 2)
    samples = [LatticeVector(scalar_quadratic.window, np.array([v])) for v in (0.05, -0.02, 0.0)]
    report = nf_residual(scalar_quadratic, result.K, result.H, 2, samples)
    assert report.jet_ok
    assert report.trend_ok
    assert len(report.sample_ratios) == 2
    assert report.scales == [1e-1, 1e-2, 1e-3]
    # the leftover is cubic, so the ratio shrinks with the sample size
    assert report.scale_ratios[-1] < report.scale_ratios[0]


def test_normal_form_conjugates_on_samples(gamma_21):
    rng = np.random.default_rng(1)
    window = LatticeWindow(dim_m=1, radius_L=2)
    F = random_coupled_quadratic(rng, window, gamma_21)
    result = compute_normal_form(F, 3, gamma_fn=gamma_21)
    x = LatticeVector(window, rng.uniform(-1e-3, 1e-3, window.dim))
    gap = jet_eval(F, jet_eval(result.K, x)) - jet_eval(result.K, jet_eval(result.H, x))
    assert gap.norm() <= 1e-8


def test_order_below_two_rejected(scalar_quadratic):
    with pytest.raises(PreconditionViolated):
        compute_normal_form(scalar_quadratic, 1)


def test_higher_order_extends_lower_order(gamma_21, fixture_config):
    rng = np.random.default_rng(2)
    window = LatticeWindow(dim_m=1, radius_L=2)
    F = random_coupled_quadratic(rng, window, gamma_21)
    config = fixture_config("resonant_diag")
    resonant_gamma = build_decay(config.decay)
    G = build_map(config.map, config.window.window(), resonant_gamma)
    for f, gamma_fn in ((F, gamma_21), (G, resonant_gamma)):
        low = compute_normal_form(f, 2, tol=1e-10, gamma_fn=gamma_fn)
        high = compute_normal_form(f, 3, tol=1e-10, gamma_fn=gamma_fn)
        for k in (1, 2):
            assert np.allclose(high.K.coefficient(k).tensor, low.K.coefficient(k).tensor, atol=1e-12)
            assert np.allclose(high.H.coefficient(k).tensor, low.H.coefficient(k).tensor, atol=1e-12)
