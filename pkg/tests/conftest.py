import numpy as np
import pytest

from retina_restore import _kernels


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=sorted(_kernels.BACKENDS))
def backend(request):
    """Run a test once per available convolution backend."""
    with _kernels.use_backend(request.param):
        yield request.param
