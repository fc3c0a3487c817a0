import numpy as np
import pytest

from lattice_sternberg.decay import LatticeWindow, make_power_exp_decay
from lattice_sternberg.errors import ContourTooClose, Singular, ZeroLeadingCoefficient
from lattice_sternberg.lattice import BlockLinearMap, gamma, gamma_norm
from lattice_sternberg.spectrum import (
    band_coefficients,
    band_matrix,
    band_matrix_inverse_oracle,
    complementary_projection,
    gamma_spectrum_probe,
    gelfand_radius,
    projection_report,
    resolvent_gamma_norm,
    restricted_spectrum,
    spectral_bounds,
    spectral_projection,
    stable_resolvent_radius,
)

BAND = (1.0, -0.75, 0.125)


@pytest.fixture
def diag_map():
    window = LatticeWindow(dim_m=1, radius_L=3, node_dim_n=2)
    return BlockLinearMap.uncoupled(window, np.diag([0.3, 0.5]))


def test_band_inverse_coefficients():
    b = band_coefficients(BAND, 31)
    j = np.arange(31)
    assert np.allclose(b, 2 * 0.5 ** j - 0.25 ** j, atol=1e-12, rtol=0)


def test_band_inverse_oracle_inverts():
    window = LatticeWindow(dim_m=1, radius_L=15)
    B = band_matrix(BAND, window)
    oracle = band_matrix_inverse_oracle(BAND, window)
    assert np.allclose(np.linalg.inv(B.matrix), oracle.matrix, atol=1e-12)
    assert np.allclose((B @ oracle).matrix, np.eye(window.dim), atol=1e-12)


def test_band_zero_leading_coefficient():
    with pytest.raises(ZeroLeadingCoefficient):
        band_coefficients((0.0, 1.0), 5)


def _inverse_gamma(theta, L):
    decay = make_power_exp_decay(2.0, theta, 1, 60)
    window = LatticeWindow(dim_m=1, radius_L=L)
    return gamma(band_matrix_inverse_oracle(BAND, window), decay)


def test_band_inverse_decay_depends_on_rate():
    # inverse entries decay like 2^-j, so the exponential rate must stay below log 2
    assert _inverse_gamma(0.8, 60) >= 10.0 * _inverse_gamma(0.8, 20)
    assert _inverse_gamma(0.5, 60) == pytest.approx(_inverse_gamma(0.5, 20), rel=1e-9)
    assert _inverse_gamma(0.69, 60) < 10.0 * _inverse_gamma(0.69, 20)


def test_gelfand_radius_uncoupled(diag_map, gamma_21):
    est = gelfand_radius(diag_map, gamma_21)
    assert abs(est.radius - 0.5) <= 0.05
    assert est.truncated_spectral_radius == pytest.approx(0.5)
    assert all(b <= a for a, b in zip(est.running_infimum, est.running_infimum[1:]))
    assert est.powers[-1] == 128


def test_spectral_bounds_of_coupled_map(gamma_21):
    A = BlockLinearMap.coupled(LatticeWindow(dim_m=1, radius_L=4), [[0.5]], gamma_21, 0.05)
    alpha, beta = spectral_bounds(A, gamma_21)
    assert 0.0 < alpha <= beta < 1.0
    eig = np.abs(np.linalg.eigvals(A.matrix))
    assert alpha <= eig.min() + 1e-6
    assert beta >= eig.max() - 1e-6


def test_resolvent_singular_at_eigenvalue(diag_map, gamma_21):
    with pytest.raises(Singular):
        resolvent_gamma_norm(diag_map, 0.5, gamma_21)
    assert resolvent_gamma_norm(diag_map, 0.0, gamma_21) == pytest.approx((1 / 0.3) / gamma_21.gamma0)


def test_probe_classifies_grid(diag_map, gamma_21):
    report = gamma_spectrum_probe(diag_map, [0.0, 0.3, 0.5, 0.9], 1e3, gamma_21)
    assert report.classes == ["resolvent", "spectrum", "spectrum", "resolvent"]
    assert report.inclusion_ok
    assert report.windows == [3]
    assert len(report.landscape_rows()) == 4


def test_probe_across_windows(gamma_21):
    def builder(L):
        return BlockLinearMap.coupled(LatticeWindow(dim_m=1, radius_L=L), [[0.5]], gamma_21, 0.05)

    report = gamma_spectrum_probe(builder, [2.0, 0.5], 1e6, gamma_21, windows=[2, 4])
    assert report.classes[0] == "resolvent"
    assert report.growth[0] == pytest.approx(1.0, abs=0.5)
    assert report.resolvent_norms[0][0] is not None


def test_resolvent_survives_small_perturbation(gamma_21):
    window = LatticeWindow(dim_m=1, radius_L=3)
    A = BlockLinearMap.uncoupled(window, [[0.5]])
    radius = stable_resolvent_radius(A, 0.0, gamma_21)
    B = BlockLinearMap.identity(window) * (0.99 * radius * gamma_21.gamma0)
    assert gamma_norm(B, gamma_21) <= radius
    assert resolvent_gamma_norm(A + B, 0.0, gamma_21) <= 2.0 * resolvent_gamma_norm(A, 0.0, gamma_21)


def test_spectral_projection_splits_spectrum(diag_map, gamma_21):
    P = spectral_projection(diag_map, gamma_21, 0.3, 0.1)
    Q = complementary_projection(P)
    report = projection_report(diag_map, P, Q, gamma_21, 0.3, 0.1, 16)
    assert report.idempotence <= 1e-8
    assert report.commutation <= 1e-8
    assert report.complement_defect <= 1e-8
    assert report.rank == 7
    assert np.allclose(restricted_spectrum(diag_map, P), 0.3, atol=1e-8)
    assert np.allclose(restricted_spectrum(diag_map, Q), 0.5, atol=1e-8)

    other = spectral_projection(diag_map, gamma_21, 0.5, 0.1)
    assert gamma_norm(P + other - BlockLinearMap.identity(P.window), gamma_21) <= 1e-8


def test_contour_through_spectrum_rejected(diag_map, gamma_21):
    with pytest.raises(ContourTooClose):
        spectral_projection(diag_map, gamma_21, 0.3, 0.2)
