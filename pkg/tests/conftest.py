import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from xcforge.constraints import build_bundle
from xcforge.fitopt import make_dataset
from xcforge.griddata import GaussianTerm, SyntheticSystemSpec, generate

settings.register_profile("xcforge", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("xcforge")


@pytest.fixture(scope="session")
def bundle():
    return build_bundle()


@pytest.fixture(scope="session")
def polarized_grid():
    terms = (GaussianTerm((0.0, 0.0, 0.0), 1.5, 1.2, "ab"),
             GaussianTerm((0.2, -0.1, 0.3), 0.7, 0.3, "a"),
             GaussianTerm((-0.3, 0.2, 0.0), 0.9, 0.1, "b"))
    return generate(SyntheticSystemSpec("gaussian_sum", "coarse", terms=terms, label="pol"))


@pytest.fixture(scope="session")
def small_dataset():
    """Twelve reactions over six systems with all three splits."""
    return make_dataset(12, 6, seed=3, noise_kcal=0.5)


@pytest.fixture(scope="session")
def fd_dataset():
    """Synthetic 50-reaction dataset used by the gradient gates."""
    return make_dataset(50, 20, seed=11, noise_kcal=1.0, splits=False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
