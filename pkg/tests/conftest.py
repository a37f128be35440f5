"""Shared fixtures: small domains and a random Dirichlet-zero field factory."""

import numpy as np
import pytest

from curllab import mesh


@pytest.fixture(scope="session")
def box4():
    return mesh.build_box_domain(4, 1.0 / 4)


@pytest.fixture(scope="session")
def box8():
    return mesh.build_box_domain(8, 1.0 / 8)


@pytest.fixture(scope="session")
def box16():
    return mesh.build_box_domain(16, 1.0 / 16)


@pytest.fixture
def rand_field():
    """Factory: random nodal vector field, zeroed on the boundary."""

    def make(domain, seed, scale=1.0):
        rng = np.random.default_rng(seed)
        vals = scale * rng.standard_normal(domain.node_shape + (3,))
        return mesh.VectorField(domain, vals).zero_boundary()

    return make
