import numpy as np
import pytest

from lag_geoflow import PolynomialArc, check_positive, cycle_from_arc, make_fiber, round_cycle
from lag_geoflow.errors import LagGeoflowError


def quad_fiber(n):
    return make_fiber([1, 0, -1], n)


def parabolic(fiber, a, N):
    return cycle_from_arc(fiber, PolynomialArc.parabolic(a), N)


def random_cycle(fiber, rng, N, min_margin=0.05):
    """Random positive cycle from +1 to -1: a cubic bend plus a real wiggle."""
    while True:
        a, b, c = rng.uniform(-0.4, 0.4), rng.uniform(-0.2, 0.2), rng.uniform(-0.1, 0.1)
        co = (1, -2 + 4j * a + 4j * b + c, -4j * a - 12j * b - 3 * c, 8j * b + 2 * c)
        try:
            g = cycle_from_arc(fiber, PolynomialArc(co), N)
        except LagGeoflowError:
            continue
        rep = check_positive(g)
        if rep.is_positive and rep.margin > min_margin:
            return g


@pytest.fixture(scope="session")
def fib2():
    return quad_fiber(2)


@pytest.fixture(scope="session")
def fib3():
    return quad_fiber(3)


@pytest.fixture(scope="session")
def round2(fib2):
    return round_cycle(fib2, 64)


@pytest.fixture(scope="session")
def round3(fib3):
    return round_cycle(fib3, 64)


@pytest.fixture(scope="session")
def par2(fib2):
    return parabolic(fib2, 0.3, 64)


@pytest.fixture(scope="session")
def par3(fib3):
    return parabolic(fib3, 0.3, 64)


@pytest.fixture
def rng():
    return np.random.default_rng(20260418)
