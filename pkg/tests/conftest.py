"""
Shared fixtures for the maintenance strategy test suite
"""

from pathlib import Path

import numpy as np
import pytest

from src.core.cbm_environment import EnvConfig, EquipmentSpec
from src.core.qrdqn_agent import AgentConfig
from src.core.strategy_trainer import EarlyStopConfig, TrainingConfig

REPO_ROOT = Path(__file__).resolve().parent.parent
TEMPLATES = REPO_ROOT / "templates"


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run slow statistical and learning tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running statistical or learning test (needs --runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def testbed_specs():
    """Three-pump testbed: an old, a mid-life and a new unit"""
    return [
        EquipmentSpec("CP-1", 19.7, 0.018, 4.0, 12.0, 0.06, criticality=0.9),
        EquipmentSpec("CDP-0", 3.0, 0.005, 3.5, 10.0, 0.04, criticality=0.7),
        EquipmentSpec("CP-2", 0.5, 0.003, 3.0, 9.0, 0.03, criticality=0.5),
    ]


@pytest.fixture
def testbed_config():
    return EnvConfig(n=3, seed=11)


@pytest.fixture
def toy_specs():
    return [
        EquipmentSpec("P-A", 12.0, 0.01, 2.0, 6.0, 0.1, criticality=0.8),
        EquipmentSpec("P-B", 1.0, 0.004, 1.5, 5.0, 0.1),
    ]


@pytest.fixture
def toy_config():
    return EnvConfig(n=2, h=6, r_normal=1.0, r_anomalous=-5.0, safety_weight=2.0, action_weight=5.0,
                     episode_length=24, seed=3)


@pytest.fixture
def small_agent_config():
    """Small network that trains quickly on the toy environment"""
    return AgentConfig(n_quantiles=17, learning_rate=1e-3, batch_size=32, buffer_capacity=5000,
                       warmup=256, target_sync_interval=100, trunk_widths=[32, 32], head_widths=[16],
                       reward_scale=0.1)


@pytest.fixture
def tiny_training():
    return TrainingConfig(eval_tail=2, early_stop=None, log_every=0)


@pytest.fixture
def short_early_stop():
    return EarlyStopConfig(window=2, min_improvement=0.01)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_template(tmp_path):
    """Copy of the toy run template with a 3-episode budget"""
    text = (TEMPLATES / "examples" / "toy_two_unit.yaml").read_text()
    text = text.replace("episode_budget: 10", "episode_budget: 3")
    text = text.replace("warmup: 256", "warmup: 32")
    path = tmp_path / "toy.yaml"
    path.write_text(text)
    return path
