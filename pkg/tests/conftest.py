import math

import numpy as np
import pytest

from pnscale.layer import default_layer, solve_corrector
from pnscale.nonlocal_op import GridField
from pnscale.potential import PotentialSpec


@pytest.fixture(scope="session")
def cosine():
    return PotentialSpec.cosine()


@pytest.fixture(scope="session")
def layer(cosine):
    return default_layer(cosine)


@pytest.fixture(scope="session")
def asymmetric():
    """A potential with nonzero third derivative at 0, so psi is not trivial."""
    return PotentialSpec.from_function(
        lambda u: (1 - np.cos(2 * math.pi * u)) * (1 + 0.3 * np.sin(2 * math.pi * u))
        / (4 * math.pi**2), n=1024)


@pytest.fixture(scope="session")
def asym_layer(asymmetric):
    return default_layer(asymmetric, Z=60.0, h=0.1)


@pytest.fixture(scope="session")
def asym_corrector(asymmetric, asym_layer):
    return solve_corrector(asymmetric, asym_layer, 1.0)


@pytest.fixture
def arctan_field():
    return GridField.from_function(lambda x: np.arctan(x) / math.pi, -200, 200, 0.02,
                                   -0.5, 0.5, left_tail=-1 / math.pi, right_tail=-1 / math.pi)


def tanh_field(h=0.005, span=15.0):
    return GridField.from_function(lambda x: (1 + np.tanh(x)) / 2, -span, span, h, 0.0, 1.0)
