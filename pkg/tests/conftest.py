import numpy as np
import pytest

from tlsattn.kernels import available_backends

BACKENDS = available_backends()


@pytest.fixture(params=sorted(BACKENDS))
def kern(request):
    """Each available kernel module in turn (compiled and numpy)."""
    return BACKENDS[request.param]


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
