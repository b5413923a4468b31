import numpy as np
import pytest

from risnoma import driver, scenario


@pytest.fixture(scope="session")
def desk_cfg():
    return scenario.ScenarioConfig.desk()


@pytest.fixture(scope="session")
def desk_channels(desk_cfg):
    return scenario.gen_channels(desk_cfg, np.random.default_rng(1))


@pytest.fixture(scope="session")
def desk_frame(desk_cfg, desk_channels):
    return driver.normalized_view(desk_channels, desk_cfg)


@pytest.fixture(scope="session")
def desk_solution(desk_cfg, desk_channels):
    """One optimized desk trial, reused by driver/SCA-level tests."""
    return driver.optimize(desk_cfg, desk_channels, np.random.default_rng(1))
