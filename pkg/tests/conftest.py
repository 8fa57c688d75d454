import numpy as np
import pytest

from residcorr.pipeline import fit_model
from residcorr.simulate import scenario_spec, simulate


@pytest.fixture(scope="session")
def scen1():
    return simulate(scenario_spec(1, m=50_000, sizes=(20, 20, 20), seed=7))


@pytest.fixture(scope="session")
def scen1_unequal():
    return simulate(scenario_spec(1, m=50_000, sizes=(10, 20, 30), seed=11))


@pytest.fixture(scope="session")
def scen2():
    return simulate(scenario_spec(2, m=50_000, sizes=(20, 20, 20), seed=3))


@pytest.fixture(scope="session")
def scen2_unequal():
    return simulate(scenario_spec(2, m=50_000, sizes=(10, 20, 30), seed=5))


@pytest.fixture(scope="session")
def fit1(scen1):
    return fit_model(scen1.genotypes, "pca1", 3, scen1.labels)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
