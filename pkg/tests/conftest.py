import numpy as np
import pytest

from mtstack import learners


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_rf():
    """Fast forest spec for structural tests."""
    return learners.LearnerSpec(learners.KIND_RF, rf=learners.RfParams(n_trees=25))


@pytest.fixture
def svr_linear():
    return learners.LearnerSpec(learners.KIND_SVR_L)


@pytest.fixture
def svr_radial():
    return learners.LearnerSpec(learners.KIND_SVR_R)


def correlated_targets(rng, n=60, f=5, d=3):
    """Small dataset whose targets share latent structure."""
    x = rng.normal(size=(n, f))
    latent = rng.normal(size=(n, 2))
    y = np.column_stack(
        [x[:, 0] + latent[:, 0],
         2.0 * latent[:, 0] - latent[:, 1] + 0.1 * rng.normal(size=n),
         x[:, 1] ** 2 + latent[:, 1]][:d]
    )
    return x, y


@pytest.fixture
def xy(rng):
    return correlated_targets(rng)
