import json
from pathlib import Path

import numpy as np
import pytest

from lattice_sternberg.config import ExperimentConfig, build_map, load_config
from lattice_sternberg.decay import LatticeWindow, make_power_exp_decay
from lattice_sternberg.jets import PolyJet
from lattice_sternberg.lattice import BlockLinearMap
from lattice_sternberg.multilinear import MultiLinearMap

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


@pytest.fixture(scope="session")
def gamma_21():
    """Gamma(j) = a |j|^-2 e^-|j| on Z."""
    return make_power_exp_decay(2.0, 1.0, 1, 30)


@pytest.fixture(scope="session")
def gamma_3_m2():
    return make_power_exp_decay(3.0, 0.0, 2, 20)


@pytest.fixture
def fixture_path():
    return lambda name: FIXTURES / f"{name}.json"


@pytest.fixture
def fixture_config(fixture_path):
    return lambda name: load_config(fixture_path(name))


@pytest.fixture
def write_config(tmp_path, fixture_path):
    """Copy of a shipped fixture with nested overrides applied."""

    def write(name, **overrides):
        raw = json.loads(fixture_path(name).read_text())
        for dotted, value in overrides.items():
            node = raw
            *parents, leaf = dotted.split("__")
            for key in parents:
                node = node.setdefault(key, {})
            node[leaf] = value
        path = tmp_path / f"{name}_override.json"
        path.write_text(json.dumps(raw))
        return path

    return write


def scalar_map(lam=0.5, c=1.0):
    window = LatticeWindow(dim_m=1, radius_L=0, node_dim_n=1)
    return PolyJet(window, (
        MultiLinearMap(window, np.array([[lam]])),
        MultiLinearMap(window, np.array([[[c]]]), symmetric=True),
    ))


@pytest.fixture
def scalar_quadratic():
    return scalar_map()


@pytest.fixture(scope="session")
def coupled_builder(gamma_21):
    """radius L -> the coupled quadratic fixture map on that window."""
    config = ExperimentConfig.parse_obj(json.loads((FIXTURES / "coupled_quadratic.json").read_text()))
    base = config.window.window()
    return lambda L: build_map(config.map, base.with_radius(L), gamma_21)


def random_decaying_linear(rng, window, gamma_fn, scale=1.0):
    """Random blocks bounded by Gamma(i - j), symmetric node coupling pattern."""
    n = window.node_dim_n
    profile = np.array(gamma_fn.matrix(window))
    weights = rng.uniform(-1.0, 1.0, profile.shape)
    weights = 0.5 * (weights + weights.T)
    blocks = rng.uniform(-1.0, 1.0, (window.size, window.size, n, n))
    mat = (blocks * (scale * profile * weights)[:, :, None, None]).transpose(0, 2, 1, 3).reshape(window.dim, window.dim)
    return BlockLinearMap(window, mat)


def random_decaying_multilinear(rng, window, gamma_fn, arity, scale=1.0):
    """W_{i; j..} = weight * Gamma(i - j_1) ... Gamma(i - j_k) on random entries."""
    G = np.array(gamma_fn.matrix(window))
    s = window.size
    profile = np.ones((s,) * (arity + 1))
    for p in range(1, arity + 1):
        shape = [s] + [1] * arity
        shape[p] = s
        profile = profile * G.reshape(shape)
    tensor = scale * profile * rng.uniform(-1.0, 1.0, profile.shape)
    return MultiLinearMap(window, tensor)


def random_coupled_quadratic(rng, window, gamma_fn, lam=0.5, strength=0.05):
    A = BlockLinearMap.coupled(window, [[lam]], gamma_fn, strength)
    W = MultiLinearMap.from_profile(window, np.eye(window.size), [rng.uniform(0.5, 1.5)], 2)
    return PolyJet.from_coefficients(window, [MultiLinearMap.from_linear(A), W])
