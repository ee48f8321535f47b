import numpy as np
import pytest

from dfml.energy import EnergyModel
from dfml.mesh import build_hierarchy
from dfml.multilevel import MultilevelDecomposition
from dfml.problems import benchmark_problem


@pytest.fixture(scope='session')
def hier2():
    return build_hierarchy(2, 2)


@pytest.fixture(scope='session')
def hier3():
    return build_hierarchy(2, 3)


@pytest.fixture(scope='session')
def hier4():
    return build_hierarchy(2, 4)


@pytest.fixture(scope='session')
def decomp2(hier2):
    return MultilevelDecomposition(hier2)


@pytest.fixture(scope='session')
def decomp3(hier3):
    return MultilevelDecomposition(hier3)


@pytest.fixture(scope='session')
def decomp4(hier4):
    return MultilevelDecomposition(hier4)


def make_model(hier, example='ex1', beta=20.0, eps=0.1):
    prob, _ = benchmark_problem(example, beta)
    return EnergyModel(prob, hier, epsilon=eps)


@pytest.fixture(scope='session')
def model3():
    return make_model(build_hierarchy(2, 3))


@pytest.fixture()
def rng():
    return np.random.default_rng(42)
