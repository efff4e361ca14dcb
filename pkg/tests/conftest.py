import numpy as np
import pytest

from pointspot import autodiff as ad


@pytest.fixture
def float64_mode():
    """Run a test under double precision (finite-difference checks)."""
    with ad.default_dtype(np.float64):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
