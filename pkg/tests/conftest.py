import numpy as np
import pytest

from phasepos.common import derive_rng
from phasepos.scenario import ScenarioConfig, generate_scenario


@pytest.fixture(scope="session")
def small_scenario():
    """20 APs over a 10 m x 10 m area at 800 MHz, fixed seed."""
    cfg = ScenarioConfig(rng_seed=7)
    return generate_scenario(cfg, derive_rng(7, "scenario"))


@pytest.fixture(scope="session")
def tiny_scenario():
    """5 APs; keeps exhaustive/batch comparisons cheap."""
    cfg = ScenarioConfig(ap_count=5, rng_seed=3)
    return generate_scenario(cfg, derive_rng(3, "scenario"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
