import numpy as np
import pytest

from tpunet import tensor


@pytest.fixture(autouse=True)
def fresh_tape():
    """Each test starts with an empty tape; leaked nodes would poison later tests."""
    tensor.reset_tape()
    yield
    tensor.reset_tape()


@pytest.fixture
def rng():
    return np.random.default_rng(0)
