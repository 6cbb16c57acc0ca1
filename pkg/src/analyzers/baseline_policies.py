#!/usr/bin/env python3
"""
Conventional maintenance baselines
Random, corrective (run-to-failure), time-based and condition-threshold
policies, evaluated through the same environment as the learned strategies.
"""

import logging
from dataclasses import replace
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from src.analyzers.economic_analysis import EpisodeMetrics, RunSummary, summarize_run
from src.core.cbm_environment import (
    ANOMALOUS, DO_NOTHING, REPAIR, REPLACE, CBMEnvironment, EnvConfig, EquipmentSpec,
)
from src.core.strategy_trainer import Policy, evaluate_policy

logger = logging.getLogger(__name__)


def random_policy(seed: Optional[int] = None) -> Policy:
    """Uniform over all 3^n joint actions"""
    rng = np.random.default_rng(seed)

    def policy(state: np.ndarray, env: CBMEnvironment) -> int:
        return int(rng.integers(env.n_actions))
    return policy


def corrective_policy() -> Policy:
    """CM: leave units running until anomalous, then replace"""
    def policy(state: np.ndarray, env: CBMEnvironment) -> List[int]:
        return [REPLACE if c == ANOMALOUS else DO_NOTHING for c in env.conditions()]
    return policy


def time_based_policy(interval_months: int = 12) -> Policy:
    """TBM: repair every unit on a fixed schedule, replace units found anomalous off-schedule"""
    if interval_months < 1:
        raise ValueError(f"interval must be >= 1 month, got {interval_months}")

    def policy(state: np.ndarray, env: CBMEnvironment) -> List[int]:
        if (env.t + 1) % interval_months == 0:
            return [REPAIR] * env.n
        return [REPLACE if c == ANOMALOUS else DO_NOTHING for c in env.conditions()]
    return policy


def condition_threshold_policy() -> Policy:
    """Rule-based CBM: repair whichever unit reports anomalous"""
    def policy(state: np.ndarray, env: CBMEnvironment) -> List[int]:
        return [REPAIR if c == ANOMALOUS else DO_NOTHING for c in env.conditions()]
    return policy


def baseline_factories(seed: int = 0) -> Dict[str, Callable[[], Policy]]:
    return {
        'random': lambda: random_policy(seed),
        'corrective': corrective_policy,
        'time_based': time_based_policy,
        'condition_threshold': condition_threshold_policy,
    }


def evaluate_baseline(name: str, env_config: EnvConfig, specs: Sequence[EquipmentSpec],
                      episodes: int, seed: int = 0) -> List[EpisodeMetrics]:
    factories = baseline_factories(seed)
    if name not in factories:
        raise KeyError(f"unknown baseline '{name}'; expected one of {', '.join(factories)}")
    env = CBMEnvironment(replace(env_config, seed=seed), specs)
    return evaluate_policy(env, factories[name](), episodes)


def evaluate_baselines(env_config: EnvConfig, specs: Sequence[EquipmentSpec], episodes: int,
                       seed: int = 0) -> Dict[str, RunSummary]:
    """Summary per baseline over all `episodes` rollouts"""
    summaries = {}
    for name in baseline_factories(seed):
        metrics = evaluate_baseline(name, env_config, specs, episodes, seed)
        summaries[name] = summarize_run(metrics, eval_tail=max(episodes, 1))
        logger.info(f"Baseline {name}: avg reward {summaries[name].avg_reward_tail:.2f} "
                    f"avg cost {summaries[name].avg_cost_tail:.2f}")
    return summaries
