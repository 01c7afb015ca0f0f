import numpy as np
import pytest

from crib_lab.body import default_body


@pytest.fixture(scope="session")
def spec():
    """One default body shared by the whole run; treated as read-only."""
    return default_body()


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
