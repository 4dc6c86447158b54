import math

import numpy as np
import pytest

from difflik.benchmarks import simulate
from difflik.models import PRESET_THETA, mrou_model


@pytest.fixture(scope="session")
def mrou():
    return mrou_model()


@pytest.fixture(scope="session")
def mrou_theta():
    return PRESET_THETA["mrou"]


@pytest.fixture(scope="session")
def mrou_series():
    """One exact MROU path at the standard parameter set, n=1000, weekly."""
    return simulate("mrou", PRESET_THETA["mrou"], 1 / 52, 1000, [0.06], 12345)


def mrou_exact_logdensity(theta, delta, x, x0):
    kappa, alpha, sigma = theta
    mean = alpha + (np.asarray(x0) - alpha) * np.exp(-kappa * delta)
    var = sigma**2 * (1 - np.exp(-2 * kappa * delta)) / (2 * kappa)
    return -0.5 * np.log(2 * math.pi * var) - (np.asarray(x) - mean) ** 2 / (2 * var)
