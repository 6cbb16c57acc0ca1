#!/usr/bin/env python3
"""
CBM Environment - multi-equipment condition-based maintenance simulator
Monthly steps over n units with age-adjusted stochastic failures, a rolling
maintenance-spend window and a five-component reward.

Action codes per unit: 0 = do nothing, 1 = repair, 2 = replace.
Joint actions are indexed as base-3 numbers with unit 0 as the most
significant digit.
"""

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import gymnasium as gym
import numpy as np
from gymnasium import spaces
from gymnasium.utils import seeding

from src.core.errors import ConfigurationError, DomainError, EpisodeError

logger = logging.getLogger(__name__)

DO_NOTHING = 0
REPAIR = 1
REPLACE = 2
ACTION_CODES = (DO_NOTHING, REPAIR, REPLACE)
ACTION_NAMES = {DO_NOTHING: 'do_nothing', REPAIR: 'repair', REPLACE: 'replace'}

NORMAL = 0
ANOMALOUS = 1

# Sensor model: temperature reading conditioned on the unit's condition
TEMP_MODEL = {
    NORMAL: (0.40, 0.05),
    ANOMALOUS: (0.70, 0.08),
}

MONTH = 1.0 / 12.0

# (upper bound in years, multiplier, lifecycle stage)
AGING_BANDS = [
    (2.0, 1.05, 'new'),
    (10.0, 1.00, 'mature'),
    (20.0, 0.95, 'aging'),
    (float('inf'), 0.85, 'legacy'),
]


@dataclass
class EquipmentSpec:
    """Static identity of one unit"""
    id: str
    install_age_years: float
    aging_coeff: float
    repair_cost: float
    replace_cost: float
    base_fail_prob: float
    criticality: float = 0.5

    def __post_init__(self):
        if self.install_age_years < 0:
            raise ConfigurationError(f"{self.id}: install_age_years must be >= 0, got {self.install_age_years}")
        if self.aging_coeff < 0:
            raise ConfigurationError(f"{self.id}: aging_coeff must be >= 0, got {self.aging_coeff}")
        if not 0.0 <= self.base_fail_prob <= 1.0:
            raise ConfigurationError(f"{self.id}: base_fail_prob must be in [0, 1], got {self.base_fail_prob}")
        if self.repair_cost < 0 or self.repair_cost >= self.replace_cost:
            raise ConfigurationError(
                f"{self.id}: need 0 <= repair_cost < replace_cost, got {self.repair_cost} / {self.replace_cost}")
        if not 0.0 <= self.criticality <= 1.0:
            raise ConfigurationError(f"{self.id}: criticality must be in [0, 1], got {self.criticality}")

    def action_cost(self, code: int) -> float:
        if code == REPAIR:
            return self.repair_cost
        if code == REPLACE:
            return self.replace_cost
        return 0.0


@dataclass
class EnvConfig:
    n: int
    h: int = 12
    r_normal: float = 20.0
    r_anomalous: float = -10.0
    cost_weight_lambda: float = 0.1
    sim_discount: float = 0.1
    leveling_weight_alpha: float = 1.0
    variance_threshold: float = 15.0
    safety_weight: float = 10.0
    action_weight: float = 5.0
    episode_length: int = 60
    lifecycle_horizon: float = 25.0
    repair_success_prob: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ConfigurationError(f"n must be >= 1, got {self.n}")
        if self.h < 0:
            raise ConfigurationError(f"h must be >= 0, got {self.h}")
        if not self.r_normal > 0 > self.r_anomalous:
            raise ConfigurationError(
                f"need r_normal > 0 > r_anomalous, got {self.r_normal} / {self.r_anomalous}")
        if self.variance_threshold < 0:
            raise ConfigurationError(f"variance_threshold must be >= 0, got {self.variance_threshold}")
        if not 0.0 <= self.sim_discount < 1.0:
            raise ConfigurationError(f"sim_discount must be in [0, 1), got {self.sim_discount}")
        if self.episode_length < 1:
            raise ConfigurationError(f"episode_length must be >= 1, got {self.episode_length}")
        if self.lifecycle_horizon <= 0:
            raise ConfigurationError(f"lifecycle_horizon must be > 0, got {self.lifecycle_horizon}")
        if not 0.0 <= self.repair_success_prob <= 1.0:
            raise ConfigurationError(f"repair_success_prob must be in [0, 1], got {self.repair_success_prob}")

    @property
    def state_dim(self) -> int:
        return 3 * self.n + self.h

    @property
    def n_actions(self) -> int:
        return 3 ** self.n


@dataclass
class EquipmentState:
    condition: int
    temp_norm: float
    age_years: float
    lifecycle_horizon: float = 25.0

    @property
    def age_norm(self) -> float:
        return min(self.age_years / self.lifecycle_horizon, 1.0)

    def as_triple(self) -> List[float]:
        return [float(self.condition), float(self.temp_norm), float(self.age_norm)]


class CostHistory:
    """Fixed-length window of monthly maintenance spend, zero-padded at start"""

    def __init__(self, h: int):
        self.h = h
        self.window = deque([0.0] * h, maxlen=h)

    def push(self, spend: float):
        if spend < 0:
            raise DomainError(f"maintenance spend must be >= 0, got {spend}")
        if self.h:
            self.window.append(float(spend))

    def values(self) -> np.ndarray:
        return np.array(self.window, dtype=np.float64)

    def variance(self) -> float:
        """Population variance of the window (0 for an empty window)"""
        if not self.h:
            return 0.0
        return float(np.var(self.values()))

    def __len__(self):
        return len(self.window)


@dataclass
class RewardBreakdown:
    risk: float
    cost: float
    leveling: float
    safety: float
    action: float
    total: float = field(init=False)

    def __post_init__(self):
        self.total = self.risk + self.cost + self.leveling + self.safety + self.action

    def as_dict(self) -> Dict[str, float]:
        return {'risk': self.risk, 'cost': self.cost, 'leveling': self.leveling,
                'safety': self.safety, 'action': self.action, 'total': self.total}


# ----- Joint action indexing -----

def decode_action(index: int, n: int) -> List[int]:
    """Action index -> per-unit codes (unit 0 most significant)"""
    if not 0 <= index < 3 ** n:
        raise DomainError(f"action index {index} outside [0, {3 ** n})")
    codes = []
    for _ in range(n):
        codes.append(index % 3)
        index //= 3
    return codes[::-1]


def encode_action(codes: Sequence[int]) -> int:
    index = 0
    for code in codes:
        if code not in ACTION_CODES:
            raise DomainError(f"action code {code} not in {ACTION_CODES}")
        index = index * 3 + int(code)
    return index


# ----- Degradation model -----

def aging_multiplier(age_years: float) -> float:
    """Lifecycle multiplier: 1.05 new, 1.00 mature, 0.95 aging, 0.85 legacy"""
    if age_years < 0:
        raise DomainError(f"age must be >= 0, got {age_years}")
    for upper, multiplier, _ in AGING_BANDS:
        if age_years <= upper:
            return multiplier
    return AGING_BANDS[-1][1]


def aging_class(age_years: float) -> str:
    """Lifecycle stage name matching aging_multiplier's bands"""
    if age_years < 0:
        raise DomainError(f"age must be >= 0, got {age_years}")
    for upper, _, stage in AGING_BANDS:
        if age_years <= upper:
            return stage
    return AGING_BANDS[-1][2]


def criticality_class(weight: float) -> str:
    if weight >= 0.8:
        return 'critical'
    if weight >= 0.5:
        return 'important'
    return 'auxiliary'


def transition_prob(spec: EquipmentSpec, state: EquipmentState, action: int,
                    repair_success_prob: float = 0.9) -> float:
    """Probability that the unit is anomalous after this step"""
    if action not in ACTION_CODES:
        raise DomainError(f"action code {action} not in {ACTION_CODES}")
    if action == REPLACE:
        return 0.0
    if state.condition == ANOMALOUS:
        if action == REPAIR:
            return 1.0 - repair_success_prob
        return 1.0

    age = state.age_years
    p = spec.base_fail_prob * (1.0 + spec.aging_coeff * age) / aging_multiplier(age)
    return float(min(max(p, 0.0), 1.0))


# ----- Reward components -----

def reward_risk(conditions: Sequence[int], cfg: EnvConfig) -> float:
    return float(sum(cfg.r_anomalous if c == ANOMALOUS else cfg.r_normal for c in conditions))


def maintenance_factor(codes: Sequence[int], cfg: EnvConfig) -> float:
    """Simultaneous-maintenance discount applies when >= 2 units are serviced"""
    active = sum(1 for c in codes if c != DO_NOTHING)
    return 1.0 - cfg.sim_discount if active >= 2 else 1.0


def gross_action_cost(codes: Sequence[int], specs: Sequence[EquipmentSpec]) -> float:
    return float(sum(spec.action_cost(c) for spec, c in zip(specs, codes)))


def reward_cost(codes: Sequence[int], specs: Sequence[EquipmentSpec], cfg: EnvConfig) -> float:
    gross = gross_action_cost(codes, specs)
    if gross == 0.0:
        return 0.0
    return -cfg.cost_weight_lambda * gross * maintenance_factor(codes, cfg)


def reward_leveling(hist: CostHistory, cfg: EnvConfig) -> float:
    if len(hist) != cfg.h:
        raise DomainError(f"cost history holds {len(hist)} entries, expected {cfg.h}")
    excess = hist.variance() - cfg.variance_threshold
    if excess <= 0.0:
        return 0.0
    return -cfg.leveling_weight_alpha * excess


def reward_safety(conditions: Sequence[int], cfg: EnvConfig) -> float:
    if not conditions:
        return 0.0
    normal = sum(1 for c in conditions if c == NORMAL)
    return cfg.safety_weight * (normal / len(conditions))


def action_appropriate(condition: int, code: int) -> bool:
    if condition == ANOMALOUS:
        return code in (REPAIR, REPLACE)
    return code == DO_NOTHING


def reward_action(conditions_before: Sequence[int], codes: Sequence[int], cfg: EnvConfig) -> float:
    return float(sum(cfg.action_weight for c, a in zip(conditions_before, codes) if action_appropriate(c, a)))


def encode_state(units: Sequence[EquipmentState], hist: CostHistory, cost_scale: float = 1.0) -> np.ndarray:
    """Per-unit (condition, temp_norm, age_norm) triples, then spend history oldest first"""
    parts = []
    for unit in units:
        parts.extend(unit.as_triple())
    state = np.array(parts, dtype=np.float64)
    if hist.h:
        state = np.concatenate([state, hist.values() * cost_scale])
    return state


def _draw_temperature(condition: int, rng: np.random.Generator) -> float:
    mean, std = TEMP_MODEL[condition]
    return float(np.clip(rng.normal(mean, std), 0.0, 1.0))


class CBMEnvironment(gym.Env):
    """
    Multi-equipment maintenance environment on the gymnasium API.

    `step` returns the scalar total reward; the per-component RewardBreakdown
    travels in `info['reward']`. Episodes end by `terminated` after
    `episode_length` months and are never truncated.
    """

    metadata = {'render_modes': []}

    def __init__(self, config: EnvConfig, specs: Sequence[EquipmentSpec]):
        super().__init__()
        self.config = config
        self.specs = list(specs)
        self.np_random, _ = seeding.np_random(config.seed)
        self.action_space = spaces.Discrete(config.n_actions)
        self.observation_space = spaces.Box(low=0.0, high=np.inf, shape=(config.state_dim,), dtype=np.float64)
        self.cost_scale = 1.0 / max(spec.replace_cost for spec in self.specs) if self.specs else 1.0
        self.units: List[EquipmentState] = []
        self.history = CostHistory(config.h)
        self.t = 0
        self.done = True
        self._ready = False

    @property
    def n(self) -> int:
        return self.config.n

    @property
    def state_dim(self) -> int:
        return self.config.state_dim

    @property
    def n_actions(self) -> int:
        return self.config.n_actions

    def conditions(self) -> List[int]:
        return [u.condition for u in self.units]

    def reset(self, *, seed: Optional[int] = None,
              options: Optional[Dict[str, Any]] = None) -> Tuple[np.ndarray, Dict[str, Any]]:
        if len(self.specs) != self.config.n:
            raise ConfigurationError(
                f"environment configured for {self.config.n} units but {len(self.specs)} specs given")
        super().reset(seed=seed)

        self.units = [
            EquipmentState(condition=NORMAL,
                           temp_norm=_draw_temperature(NORMAL, self.np_random),
                           age_years=spec.install_age_years,
                           lifecycle_horizon=self.config.lifecycle_horizon)
            for spec in self.specs
        ]
        self.history = CostHistory(self.config.h)
        self.t = 0
        self.done = False
        self._ready = True
        return self.observe(), {'step': 0}

    def observe(self) -> np.ndarray:
        return encode_state(self.units, self.history, self.cost_scale)

    def _as_codes(self, action: Union[int, Sequence[int]]) -> List[int]:
        if isinstance(action, (int, np.integer)):
            return decode_action(int(action), self.n)
        codes = [int(c) for c in action]
        if len(codes) != self.n:
            raise DomainError(f"joint action has {len(codes)} codes, expected {self.n}")
        for c in codes:
            if c not in ACTION_CODES:
                raise DomainError(f"action code {c} not in {ACTION_CODES}")
        return codes

    def transition_probs(self, codes: Sequence[int]) -> List[float]:
        return [transition_prob(spec, unit, code, self.config.repair_success_prob)
                for spec, unit, code in zip(self.specs, self.units, codes)]

    def sample_conditions(self, codes: Sequence[int], rng: np.random.Generator) -> Tuple[List[int], List[float]]:
        """Draw next conditions without touching the environment state"""
        probs = self.transition_probs(codes)
        draws = rng.random(len(probs))
        return [ANOMALOUS if u < p else NORMAL for u, p in zip(draws, probs)], probs

    def step(self, action: Union[int, Sequence[int]],
             rng: Optional[np.random.Generator] = None) -> Tuple[np.ndarray, float, bool, bool, Dict[str, Any]]:
        if not self._ready:
            raise EpisodeError("step() called before reset()")
        if self.done:
            raise EpisodeError(f"episode finished after {self.t} steps; call reset()")
        rng = rng if rng is not None else self.np_random
        cfg = self.config
        codes = self._as_codes(action)
        before = self.conditions()

        after, probs = self.sample_conditions(codes, rng)
        temps = [_draw_temperature(c, rng) for c in after]

        gross = gross_action_cost(codes, self.specs)
        spend = gross * maintenance_factor(codes, cfg)

        for unit, code, condition, temp in zip(self.units, codes, after, temps):
            unit.condition = condition
            unit.temp_norm = temp
            unit.age_years += MONTH
            if code == REPLACE:
                unit.age_years = 0.0

        self.history.push(spend)

        breakdown = RewardBreakdown(
            risk=reward_risk(after, cfg),
            cost=reward_cost(codes, self.specs, cfg),
            leveling=reward_leveling(self.history, cfg),
            safety=reward_safety(after, cfg),
            action=reward_action(before, codes, cfg),
        )

        self.t += 1
        self.done = self.t >= cfg.episode_length

        info = {
            'step': self.t,
            'reward': breakdown,
            'spend': spend,
            'gross_cost': gross,
            'transitions': [
                {'id': spec.id, 'action': ACTION_NAMES[code], 'before': b, 'after': a, 'p_anomalous': p}
                for spec, code, b, a, p in zip(self.specs, codes, before, after, probs)
            ],
        }
        return self.observe(), breakdown.total, self.done, False, info
