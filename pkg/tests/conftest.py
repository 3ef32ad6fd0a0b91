import numpy as np
import pytest

import langwm.autodiff as ad


@pytest.fixture
def f64():
    """Run a test in float64 with NaN checking on every op."""
    with ad.precision("float64"), ad.debug_checks():
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(0)
