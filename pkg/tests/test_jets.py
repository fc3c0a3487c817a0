import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_coupled_quadratic, random_decaying_linear, scalar_map
from lattice_sternberg import settings as ls_settings
from lattice_sternberg.decay import LatticeWindow
from lattice_sternberg.errors import ArityMismatch, NotInvertible, PreconditionViolated
from lattice_sternberg.jets import (
    PolyJet,
    _orderings,
    _partitions,
    identity_jet,
    jet_add,
    jet_coefficient,
    jet_compose,
    jet_eval,
    jet_invert,
    jet_iterate,
    jet_jacobian,
    jet_sub,
    jet_truncate,
    left_linear,
    linear_jet,
    rescale,
)
from lattice_sternberg.lattice import BlockLinearMap, LatticeVector, gamma_norm
from lattice_sternberg.multilinear import MultiLinearMap, ml_gamma_norm

SCALAR = LatticeWindow(dim_m=1, radius_L=0)


def scalar_jet(*coeffs):
    return PolyJet(SCALAR, tuple(
        MultiLinearMap(SCALAR, np.full((1,) * (k + 1), float(c)), symmetric=True)
        for k, c in enumerate(coeffs, start=1)
    ))


def scalar_coeffs(f):
    return [float(C.tensor.reshape(-1)[0]) for C in f.coefficients]


def test_partitions_and_orderings():
    assert sorted(_partitions(4, 2, 4)) == [(2, 2), (3, 1)]
    assert list(_partitions(3, 3, 3)) == [(1, 1, 1)]
    assert list(_partitions(5, 2, 2)) == []
    assert _orderings((3, 1)) == 2
    assert _orderings((2, 1, 1)) == 3


def test_scalar_composition():
    g = scalar_jet(2.0, 3.0)
    f = scalar_jet(0.5, 1.0)
    h = jet_compose(g, f, 3)
    assert scalar_coeffs(h) == pytest.approx([1.0, 2.75, 3.0], abs=1e-15)


def test_iterate_matches_explicit_square():
    F = scalar_map(0.5, 1.0)
    assert scalar_coeffs(jet_iterate(F, 2, 3)) == pytest.approx([0.25, 0.75, 1.0], abs=1e-15)
    assert scalar_coeffs(jet_iterate(F, 1, 3)) == pytest.approx([0.5, 1.0])


def test_scalar_reversion():
    f = scalar_jet(1.0, -4.0)
    g = jet_invert(f, 3)
    assert scalar_coeffs(g) == pytest.approx([1.0, 4.0, 32.0], abs=1e-12)


def test_inverse_composes_to_identity(gamma_21):
    rng = np.random.default_rng(0)
    window = LatticeWindow(dim_m=1, radius_L=2)
    F = random_coupled_quadratic(rng, window, gamma_21)
    G = jet_invert(F, 4, gamma_21)
    ident = jet_compose(G, F, 4)
    assert np.allclose(ident.coefficients[0].tensor, np.eye(window.dim), atol=1e-12)
    for C in ident.coefficients[1:]:
        assert C.max_abs() <= 1e-10


def test_singular_linear_part_not_invertible():
    f = scalar_jet(0.0, 1.0)
    with pytest.raises(NotInvertible):
        jet_invert(f, 2)


def test_eval_and_jacobian():
    f = scalar_jet(0.5, 1.0)
    x = LatticeVector(SCALAR, np.array([0.3]))
    assert jet_eval(f, x).values[0] == pytest.approx(0.5 * 0.3 + 0.09)
    assert jet_jacobian(f, x).matrix[0, 0] == pytest.approx(1.1)


def test_jacobian_matches_finite_difference(gamma_21):
    rng = np.random.default_rng(1)
    window = LatticeWindow(dim_m=1, radius_L=2)
    F = random_coupled_quadratic(rng, window, gamma_21)
    x = LatticeVector(window, rng.uniform(-0.1, 0.1, window.dim))
    J = jet_jacobian(F, x).matrix
    h = 1e-6
    for col in range(window.dim):
        e = LatticeVector.emb(window, col, [h])
        fd = (jet_eval(F, x + e).values - jet_eval(F, x - e).values) / (2 * h)
        assert np.allclose(J[:, col], fd, atol=1e-8)


def test_rescale_scales_orders():
    f = scalar_jet(0.5, 1.0, 2.0)
    assert scalar_coeffs(rescale(f, 0.1)) == pytest.approx([0.5, 0.1, 0.02])
    with pytest.raises(PreconditionViolated):
        rescale(f, 0.0)


@settings(deadline=None, max_examples=50)
@given(st.floats(min_value=0.01, max_value=100.0))
def test_rescale_round_trip(delta):
    f = scalar_jet(0.5, 1.0, 2.0)
    assert scalar_coeffs(rescale(rescale(f, delta), 1.0 / delta)) == pytest.approx([0.5, 1.0, 2.0], rel=1e-12)


def test_add_sub_truncate():
    f = scalar_jet(1.0, 2.0)
    g = scalar_jet(0.5, 0.0, 3.0)
    assert scalar_coeffs(jet_add(f, g)) == [1.5, 2.0, 3.0]
    assert scalar_coeffs(jet_sub(f, f)) == [0.0, 0.0]
    assert jet_truncate(g, 1).degree == 1
    assert jet_coefficient(f, identity_jet(SCALAR), 5).max_abs() == 0.0


def test_left_linear_norm_bound(gamma_21):
    rng = np.random.default_rng(2)
    window = LatticeWindow(dim_m=1, radius_L=3)
    for _ in range(10):
        F = random_coupled_quadratic(rng, window, gamma_21)
        A = random_decaying_linear(rng, window, gamma_21)
        composed = left_linear(A, F)
        for C_AF, C_F in zip(composed.coefficients, F.coefficients):
            assert ml_gamma_norm(C_AF, gamma_21) <= gamma_norm(A, gamma_21) * ml_gamma_norm(C_F, gamma_21) * (1 + 1e-12)


def test_linear_jet_and_arity_check():
    window = LatticeWindow(dim_m=1, radius_L=1)
    A = BlockLinearMap.identity(window) * 0.5
    assert linear_jet(A).degree == 1
    with pytest.raises(ArityMismatch):
        PolyJet(window, (MultiLinearMap.zeros(window, 2),))


def test_compose_degree_limit():
    f = scalar_jet(0.5)
    with pytest.raises(PreconditionViolated):
        jet_compose(f, f, 7)


def test_composition_is_associative(gamma_21):
    rng = np.random.default_rng(5)
    window = LatticeWindow(dim_m=1, radius_L=2)
    f, g, h = (random_coupled_quadratic(rng, window, gamma_21, lam=rng.uniform(0.3, 0.7)) for _ in range(3))
    left = jet_compose(jet_compose(h, g, 4), f, 4)
    right = jet_compose(h, jet_compose(g, f, 4), 4)
    for C, D in zip(left.coefficients, right.coefficients):
        assert np.allclose(C.tensor, D.tensor, atol=1e-12)


def test_iterates_form_a_semigroup(gamma_21):
    rng = np.random.default_rng(6)
    window = LatticeWindow(dim_m=1, radius_L=2)
    F = random_coupled_quadratic(rng, window, gamma_21)
    twice_two = jet_iterate(jet_iterate(F, 2, 3), 2, 3)
    four = jet_iterate(F, 4, 3)
    for C, D in zip(twice_two.coefficients, four.coefficients):
        assert np.allclose(C.tensor, D.tensor, atol=1e-13)


def test_sparse_jets_match_dense(monkeypatch, gamma_21):
    window = LatticeWindow(dim_m=1, radius_L=3)
    x = LatticeVector(window, np.random.default_rng(7).uniform(-0.1, 0.1, window.dim))

    def evaluate():
        F = random_coupled_quadratic(np.random.default_rng(8), window, gamma_21)
        F2 = jet_iterate(F, 2, 3)
        return F.coefficients[1].is_sparse, (
            jet_eval(F, x).values,
            jet_jacobian(F, x).dense(),
            jet_eval(F2, x).values,
            jet_eval(jet_invert(F, 3, gamma_21), x).values,
        )

    monkeypatch.setattr(ls_settings, "DENSE_LIMIT", 300)
    sparse, got = evaluate()
    monkeypatch.setattr(ls_settings, "DENSE_LIMIT", 10 ** 7)
    dense, expected = evaluate()
    assert sparse and not dense
    for a, b in zip(got, expected):
        assert np.allclose(a, b, atol=1e-13)
