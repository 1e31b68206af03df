import numpy as np
import pytest

from fracheat.core import Grid, SpatialDomain
from fracheat.fracop import assemble
from fracheat.kernel import spectral_decompose

REFERENCE_DOMAIN = SpatialDomain.interval(-1.0, 1.0, padding=1.0)
KERNEL_TIMES = [0.05, 0.1, 0.2, 0.4]


@pytest.fixture(scope="session")
def grid128():
    return Grid(REFERENCE_DOMAIN, 128)


@pytest.fixture(scope="session")
def grid192():
    return Grid(REFERENCE_DOMAIN, 192)


@pytest.fixture(scope="session")
def grid256():
    return Grid(REFERENCE_DOMAIN, 256)


def _decompose(grid, s):
    return spectral_decompose(assemble(grid, 2 * s))


@pytest.fixture(scope="session")
def dec128(grid128):
    return _decompose(grid128, 0.5)


@pytest.fixture(scope="session")
def dec192(grid192):
    return _decompose(grid192, 0.5)


@pytest.fixture(scope="session")
def dec256(grid256):
    return _decompose(grid256, 0.5)


@pytest.fixture(scope="session")
def dec128_s075(grid128):
    return _decompose(grid128, 0.75)


@pytest.fixture(scope="session")
def dec192_s075(grid192):
    return _decompose(grid192, 0.75)


@pytest.fixture(scope="session")
def grid2d():
    return Grid(SpatialDomain.square(-1.0, 1.0, padding=1.0), 32)


@pytest.fixture(scope="session")
def dec2d(grid2d):
    return _decompose(grid2d, 0.5)


@pytest.fixture()
def rng():
    return np.random.default_rng(20260809)
