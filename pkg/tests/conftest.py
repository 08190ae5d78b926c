import numpy as np
import pytest

from beamalign.channel import Scenario, gen_dataset
from beamalign.config import DESK_MIMO, DESK_MISO, SystemConfig
from beamalign.harness import ExperimentConfig, prepare


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_miso():
    """Prepared desk-scale MISO data (3000 samples)."""
    ds = gen_dataset(DESK_MISO, 7, Scenario(), 3000)
    return prepare(ds, ExperimentConfig(data_seed=7))


@pytest.fixture(scope="session")
def small_mimo():
    ds = gen_dataset(DESK_MIMO, 7, Scenario(), 3000)
    return prepare(ds, ExperimentConfig(preset="desk-mimo", data_seed=7))


@pytest.fixture
def toy_miso():
    return SystemConfig(m_t=4, m_r=1, n_t=8, n_r=1)


@pytest.fixture
def toy_mimo():
    return SystemConfig(m_t=4, m_r=2, n_t=8, n_r=4)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
