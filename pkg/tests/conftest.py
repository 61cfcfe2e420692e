import numpy as np
import pytest

from vssgp.oracles import random_data, random_spec, random_state


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_problem(rng):
    """N=10, Q=2, K=3, L=2, D=2 instance with fixed phases."""
    X, Y = random_data(rng, 10, 2, 2)
    spec = random_spec(rng, 2, 2)
    state = random_state(rng, X, 2, 3, 2, 2)
    return X, Y, state, spec


def mc_within(samples, value, n_se=3.0):
    """True when ``value`` is within ``n_se`` standard errors of the sample mean."""
    samples = np.asarray(samples, dtype=float)
    se = samples.std(ddof=1, axis=0) / np.sqrt(samples.shape[0])
    return np.abs(samples.mean(axis=0) - value) <= n_se * se
