import numpy as np
import pytest

from rgkam import Potential
from rgkam.frequency import parse_frequency


@pytest.fixture(scope="session")
def golden():
    return parse_frequency("golden")


@pytest.fixture(scope="session")
def cos1():
    """V = cos(theta_1) on T^2."""
    return Potential.from_modes(2, {(1, 0): 0.5, (-1, 0): 0.5})


@pytest.fixture(scope="session")
def three_mode():
    """Analytic V whose (3,-2) mode enters only at stage j=1 for M=2."""
    return Potential.from_modes(2, {(1, 0): 0.5, (-1, 0): 0.5, (2, -1): 0.25, (-2, 1): 0.25,
                                    (3, -2): 0.25, (-3, 2): 0.25})


def random_map(rng, d, Q, n_modes, real=True):
    from rgkam import FourierMap
    modes = {}
    for _ in range(n_modes):
        q = tuple(int(k) for k in rng.integers(-Q, Q + 1, size=d))
        modes[q] = rng.normal(size=d) + 1j * rng.normal(size=d)
    m = FourierMap.from_modes(d, Q, modes, real=real)
    return m.symmetrized() if real else m
