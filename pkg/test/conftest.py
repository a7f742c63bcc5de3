from fractions import Fraction

import numpy as np
import pytest

from relukit.pwfun import PiecewisePoly
from relukit.shallow import Problem, ShallowArch, ShallowParams


UNIT = (Fraction(0), Fraction(1))
HALF = Fraction(1, 2)


@pytest.fixture
def unit():
    return UNIT


@pytest.fixture
def abs_problem():
    """f(x) = |x - 1/2| on [0, 1] with uniform density"""

    target = PiecewisePoly(
        [0, HALF, 1], [[HALF, -1], [-HALF, 1]], continuous=True
    )
    return Problem(target)


@pytest.fixture
def zero_problem():
    return Problem(PiecewisePoly.constant(Fraction(0), UNIT))


@pytest.fixture
def identity_problem():
    return Problem(PiecewisePoly.from_poly([Fraction(0), Fraction(1)], UNIT))


@pytest.fixture
def square_problem():
    return Problem(PiecewisePoly.from_poly([0, 0, Fraction(1)], UNIT))


@pytest.fixture
def rng():
    return np.random.default_rng(20200416)


@pytest.fixture
def random_rational_theta(rng):
    """Factory for shallow parameters with small random rational entries"""

    def make(width, domain=UNIT, denominator=8, spread=16):
        numerators = rng.integers(-spread, spread + 1, size=3 * width + 1)
        theta = [Fraction(int(n), denominator) for n in numerators]
        return ShallowParams(ShallowArch(width, domain), theta)

    return make
