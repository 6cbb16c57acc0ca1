#!/usr/bin/env python3
"""
Strategy Trainer - episode orchestration for one risk-stratified strategy
Runs reset -> select_action -> step -> push -> train_step -> sync, records
per-episode metrics, checks early stopping and summarizes the final episodes.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np
from tqdm import tqdm

from src.analyzers.economic_analysis import EpisodeMetrics, RunSummary, summarize_run
from src.core.cbm_environment import (
    CBMEnvironment, EnvConfig, EquipmentSpec, decode_action, encode_action,
)
from src.core.errors import ConfigurationError, TrainingError
from src.core.numerics import EVAL, TRAIN
from src.core.qrdqn_agent import AgentConfig, QRDQNAgent, RiskProfile
from src.core.replay_buffer import PrioritizedReplayBuffer, TransitionRecord, anneal_beta

logger = logging.getLogger(__name__)

SAFETY_FIRST = 'safety-first'
BALANCED = 'balanced'
COST_EFFICIENT = 'cost-efficient'
STRATEGY_NAMES = (SAFETY_FIRST, BALANCED, COST_EFFICIENT)

DEFAULT_EPISODE_BUDGET = 3000

COMPLETED = 'completed'
EARLY_STOPPED = 'early_stopped'
ABORTED = 'aborted'

# A policy maps (state vector, environment) to a joint action index or per-unit codes
Policy = Callable[[np.ndarray, CBMEnvironment], Union[int, Sequence[int]]]


@dataclass
class EarlyStopConfig:
    window: int = 200
    min_improvement: float = 0.01

    def __post_init__(self):
        if self.window < 1:
            raise ConfigurationError(f"early-stop window must be >= 1, got {self.window}")


@dataclass
class TrainingConfig:
    eval_tail: int = 100
    early_stop: Optional[EarlyStopConfig] = field(default_factory=EarlyStopConfig)
    log_every: int = 100
    verbose: bool = False

    def __post_init__(self):
        if self.eval_tail < 1:
            raise ConfigurationError(f"eval_tail must be >= 1, got {self.eval_tail}")


@dataclass
class StrategyConfig:
    """Risk profile, reward-weight multipliers and training budget of one strategy"""
    name: str
    risk_profile: RiskProfile
    lambda_multiplier: float = 1.0
    safety_multiplier: float = 1.0
    episode_budget: int = DEFAULT_EPISODE_BUDGET
    early_stop: Optional[EarlyStopConfig] = field(default_factory=EarlyStopConfig)

    def __post_init__(self):
        if self.episode_budget < 0:
            raise ConfigurationError(f"episode_budget must be >= 0, got {self.episode_budget}")

    def reward_overrides(self) -> Dict[str, float]:
        return {'cost_weight_lambda': self.lambda_multiplier, 'safety_weight': self.safety_multiplier}


def default_strategies(episode_budget: int = DEFAULT_EPISODE_BUDGET,
                       early_stop: Optional[EarlyStopConfig] = None) -> Dict[str, StrategyConfig]:
    """Safety-first (pessimistic), balanced (risk-neutral), cost-efficient (optimistic)"""
    early_stop = early_stop if early_stop is not None else EarlyStopConfig()
    return {
        SAFETY_FIRST: StrategyConfig(SAFETY_FIRST, RiskProfile.lower_tail(0.25), 0.5, 1.5,
                                     episode_budget, replace(early_stop)),
        BALANCED: StrategyConfig(BALANCED, RiskProfile.full_mean(), 1.0, 1.0,
                                 episode_budget, replace(early_stop)),
        COST_EFFICIENT: StrategyConfig(COST_EFFICIENT, RiskProfile.upper_tail(0.75), 2.0, 0.5,
                                       episode_budget, replace(early_stop)),
    }


def strategy_env_config(env_config: EnvConfig, strategy: StrategyConfig) -> EnvConfig:
    """Environment config with the strategy's reward-weight multipliers applied"""
    return replace(env_config,
                   cost_weight_lambda=env_config.cost_weight_lambda * strategy.lambda_multiplier,
                   safety_weight=env_config.safety_weight * strategy.safety_multiplier)


def early_stop_check(rewards: Sequence[float], window: int, min_improvement: float) -> bool:
    """
    True when the mean over the last `window` episodes improved by less than
    `min_improvement` (relative) over the window before it. Only evaluated on
    window boundaries and never before two full windows.
    """
    n = len(rewards)
    if window < 1 or n < 2 * window or n % window:
        return False
    previous = float(np.mean(rewards[n - 2 * window:n - window]))
    current = float(np.mean(rewards[n - window:]))
    scale = abs(previous) if previous != 0 else 1.0
    return (current - previous) / scale < min_improvement


def _seed_ints(seed: int, count: int) -> List[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(count)]


def run_episode(env: CBMEnvironment, policy: Policy, episode: int,
                on_step: Optional[Callable[[np.ndarray, int, float, np.ndarray, bool], Optional[float]]] = None
                ) -> EpisodeMetrics:
    """Roll one episode; `on_step` sees each transition and may return a loss"""
    metrics = EpisodeMetrics(episode=episode)
    losses = []
    state, _ = env.reset()
    done = False
    while not done:
        action = policy(state, env)
        codes = decode_action(int(action), env.n) if np.isscalar(action) else [int(c) for c in action]
        before = env.conditions()
        next_state, _, terminated, truncated, info = env.step(codes)
        breakdown = info['reward']
        done = terminated or truncated
        metrics.record_step(breakdown, info['spend'], before, codes, env.conditions())
        if on_step is not None:
            loss = on_step(state, encode_action(codes), breakdown.total, next_state, done)
            if loss is not None:
                losses.append(loss)
        state = next_state
    if losses:
        metrics.mean_loss = float(np.mean(losses))
    return metrics


def evaluate_policy(env: CBMEnvironment, policy: Policy, episodes: int) -> List[EpisodeMetrics]:
    """Run `episodes` rollouts of a fixed policy, no learning"""
    return [run_episode(env, policy, ep) for ep in range(episodes)]


def greedy_policy(agent: QRDQNAgent, profile: RiskProfile) -> Policy:
    """Eval-mode (noise-free) risk-profiled policy"""
    def policy(state: np.ndarray, env: CBMEnvironment) -> int:
        return agent.select_action(state, profile, EVAL)
    return policy


def evaluate_agent(agent: QRDQNAgent, env_config: EnvConfig, specs: Sequence[EquipmentSpec],
                   profile: RiskProfile, episodes: int, seed: int = 0) -> List[EpisodeMetrics]:
    env = CBMEnvironment(replace(env_config, seed=seed), specs)
    return evaluate_policy(env, greedy_policy(agent, profile), episodes)


@dataclass
class TrainingResult:
    strategy: str
    status: str
    summary: RunSummary
    metrics: List[EpisodeMetrics]
    agent: QRDQNAgent
    error: Optional[str] = None
    train_steps: int = 0


def run_training(strategy: StrategyConfig, env_config: EnvConfig, specs: Sequence[EquipmentSpec],
                 agent_config: Optional[AgentConfig] = None, training: Optional[TrainingConfig] = None,
                 seed: int = 0, run_logger: Optional[logging.Logger] = None) -> TrainingResult:
    """Train one strategy; a non-finite training state aborts with the metrics gathered so far"""
    agent_config = agent_config or AgentConfig()
    training = training or TrainingConfig()
    log = run_logger or logger

    env_seed, agent_seed, buffer_seed = _seed_ints(seed, 3)
    env = CBMEnvironment(replace(strategy_env_config(env_config, strategy), seed=env_seed), specs)
    agent = QRDQNAgent(env.state_dim, env.n, agent_config, seed=agent_seed)
    buffer = PrioritizedReplayBuffer(agent_config.buffer_capacity, agent_config.per_alpha,
                                     agent_config.per_eps, seed=buffer_seed)
    ready_at = max(agent_config.warmup, agent_config.batch_size)
    budget = strategy.episode_budget

    metrics: List[EpisodeMetrics] = []
    rewards: List[float] = []
    status = COMPLETED
    error = None
    beta = agent_config.per_beta_start

    def policy(state, _env):
        return agent.select_action(state, strategy.risk_profile, TRAIN)

    def learn(state, action_index, reward, next_state, done):
        buffer.push(TransitionRecord(state, action_index, reward, next_state, done))
        if len(buffer) >= ready_at:
            loss, _ = agent.train_step(buffer, beta)
            return loss
        return None

    log.info(f"Training {strategy.name}: {budget} episodes, profile {strategy.risk_profile.describe()}")
    progress = tqdm(total=budget, desc=f"Training {strategy.name}", disable=not training.verbose)
    try:
        for ep in range(budget):
            beta = anneal_beta(ep / max(budget - 1, 1), agent_config.per_beta_start, agent_config.per_beta_end)
            episode = run_episode(env, policy, ep, learn)
            if not np.isfinite(episode.total_reward):
                raise TrainingError(f"non-finite episode reward in episode {ep}")
            metrics.append(episode)
            rewards.append(episode.total_reward)
            progress.update(1)

            if training.log_every and (ep + 1) % training.log_every == 0:
                loss = f"{episode.mean_loss:.4f}" if episode.mean_loss is not None else "n/a"
                log.info(f"[{strategy.name}] episode {ep + 1}/{budget} reward {episode.total_reward:.2f} "
                         f"cost {episode.total_cost:.2f} loss {loss} beta {beta:.3f}")

            if strategy.early_stop and early_stop_check(rewards, strategy.early_stop.window,
                                                        strategy.early_stop.min_improvement):
                log.info(f"[{strategy.name}] early stop after {ep + 1} episodes")
                status = EARLY_STOPPED
                break
    except TrainingError as e:
        status = ABORTED
        error = str(e)
        log.error(f"[{strategy.name}] training aborted after {len(metrics)} episodes: {e}")
    finally:
        progress.close()

    summary = summarize_run(metrics, training.eval_tail)
    return TrainingResult(strategy.name, status, summary, metrics, agent, error, agent.train_steps)
