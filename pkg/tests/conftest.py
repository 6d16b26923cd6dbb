import numpy as np
import pytest

from dronevolve.constants import PhysicalConstants
from dronevolve.morphology import baseline_hexacopter, decode, random_genotype


@pytest.fixture(scope="session")
def phys():
    return PhysicalConstants()


@pytest.fixture(scope="session")
def baseline(phys):
    return baseline_hexacopter()


@pytest.fixture(scope="session")
def baseline_ph(baseline, phys):
    return decode(baseline, phys)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


def random_genotypes(n, seed=0, phys=None):
    r = np.random.default_rng(seed)
    phys = phys or PhysicalConstants()
    return [random_genotype(r, phys) for _ in range(n)]
