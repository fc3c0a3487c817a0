import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lattice_sternberg.decay import (
    DecayFunction,
    LatticeWindow,
    TabulatedDecay,
    decay_tail,
    make_power_exp_decay,
    verify_decay,
)
from lattice_sternberg.errors import NotSummable, PreconditionViolated, WindowMismatch


@pytest.mark.parametrize(
    "alpha, theta, dim_m, L",
    [(2.0, 1.0, 1, 50), (3.0, 0.0, 1, 50), (1.5, 0.5, 1, 50), (3.0, 0.0, 2, 20)],
)
def test_power_exp_decay_passes_verification(alpha, theta, dim_m, L):
    gamma = make_power_exp_decay(alpha, theta, dim_m, L)
    report = verify_decay(gamma, L)
    assert report.passed
    assert report.sum_window + report.tail <= 1.0
    assert gamma.certificate is not None and gamma.certificate.passed
    assert 0.0 < gamma.gamma0 <= 1.0


def test_normalized_pure_exponential_fails_convolution():
    theta = 1.0
    total = (1.0 + math.exp(-theta)) / (1.0 - math.exp(-theta))
    values = [0.999 * math.exp(-theta * r) / total for r in range(200)]
    gamma = TabulatedDecay(dim_m=1, values=values)
    report = verify_decay(gamma, 20)
    assert report.summability_ok
    assert not report.convolution_ok
    assert not report.passed


def test_alpha_at_most_dimension_not_summable():
    with pytest.raises(NotSummable):
        make_power_exp_decay(1.0, 0.0, 1, 20)
    with pytest.raises(NotSummable):
        make_power_exp_decay(2.0, 1.0, 2, 20)


def test_small_verification_window_rejected():
    with pytest.raises(PreconditionViolated):
        make_power_exp_decay(2.0, 1.0, 1, 4)


def test_decay_tail_bounds_brute_force(gamma_21):
    for L in (0, 5, 20, 100):
        brute = 2.0 * float(gamma_21.radial(np.arange(L + 1, 20000)).sum())
        tail = decay_tail(gamma_21, L)
        assert brute <= tail <= 2.0 * brute + 1e-12


def test_decay_tail_monotone(gamma_21):
    tails = [decay_tail(gamma_21, L) for L in range(0, 60)]
    assert all(b <= a for a, b in zip(tails, tails[1:]))


def test_decay_tail_far_regime_uses_integral():
    gamma = DecayFunction(dim_m=1, alpha=3.0, theta=0.0, amplitude_a=0.1)
    assert 0.0 < decay_tail(gamma, 10_000) < decay_tail(gamma, 100)


@settings(deadline=None, max_examples=50)
@given(st.integers(min_value=-40, max_value=40))
def test_profile_is_even(j):
    gamma = DecayFunction(dim_m=1, alpha=2.0, theta=0.3, amplitude_a=0.2)
    assert gamma(j) == gamma(-j)


def test_gamma_matrix_is_toeplitz(gamma_21):
    window = LatticeWindow(dim_m=1, radius_L=4)
    G = gamma_21.matrix(window)
    assert G.shape == (9, 9)
    assert np.allclose(np.diag(G), gamma_21.gamma0)
    assert np.isclose(G[0, 3], gamma_21(3))
    assert not G.flags.writeable


def test_tabulated_profile_vanishes_beyond_table():
    gamma = TabulatedDecay(dim_m=1, values=[0.4, 0.1])
    assert gamma(0) == 0.4
    assert gamma(1) == 0.1
    assert gamma(5) == 0.0


def test_window_indexing():
    window = LatticeWindow(dim_m=2, radius_L=1, node_dim_n=3)
    assert window.size == 9
    assert window.dim == 27
    assert window.index_of((0, 0)) == 4
    assert tuple(window.offsets[window.index_of((1, -1))]) == (1, -1)
    with pytest.raises(WindowMismatch):
        window.index_of((2, 0))


def test_single_node_window():
    window = LatticeWindow(dim_m=1, radius_L=0)
    assert window.size == 1
    assert window.index_of((0,)) == 0
