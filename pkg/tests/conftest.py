import math

import numpy as np
import pytest
from scipy.integrate import quad

from degflow.fields import GridSpec


def collapsed_oracle(t):
    """u(t) for n=1, A0=0, B_inf=1, Omega=1, v=0 by adaptive quadrature."""
    val, _ = quad(lambda s: math.exp(s - t) * math.log1p(-math.exp(-s)), 0.0, t, limit=200, epsabs=1e-14)
    return val


def collapsed_closed_form(t):
    x = math.exp(t)
    return ((x - 1.0) * math.log(x - 1.0) - x * math.log(x)) / x


@pytest.fixture
def g1():
    return GridSpec(1, 32)


@pytest.fixture
def g2():
    return GridSpec(2, 16)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
