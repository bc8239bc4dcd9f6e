import numpy as np
import pytest

from renormindex.geometry import build_geometry


@pytest.fixture(scope="session")
def torus():
    return build_geometry({"kind": "flat_torus"})


@pytest.fixture(scope="session")
def sphere():
    return build_geometry({"kind": "round_sphere"})


@pytest.fixture(scope="session")
def cylinder():
    return build_geometry({"kind": "b_cylinder"})


@pytest.fixture(scope="session")
def circle():
    return build_geometry({"kind": "flat_torus", "periods": 2 * np.pi})


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
