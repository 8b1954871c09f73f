import numpy as np
import pytest

from riskclip.policies import Categorical


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def finite_pair():
    """A 5-outcome safe/optimized pair with a wide likelihood-ratio range."""
    safe = Categorical.from_probs([0.5, 0.3, 0.15, 0.04, 0.01])
    optimized = Categorical.from_probs([0.05, 0.1, 0.25, 0.35, 0.25])
    return safe, optimized


@pytest.fixture
def big_pair():
    """A 64-outcome pair for the larger finite-support checks."""
    gen = np.random.default_rng(99)
    safe = Categorical.from_probs(gen.dirichlet(np.full(64, 2.0)))
    optimized = Categorical.from_probs(gen.dirichlet(np.full(64, 0.7)))
    return safe, optimized
