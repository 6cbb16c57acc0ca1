#!/usr/bin/env python3
"""
Config Loader - YAML run templates to typed run configuration
Every error carries the template path and, where known, the source line.
"""

import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import yaml

from src.core.cbm_environment import EnvConfig, EquipmentSpec
from src.core.errors import ConfigurationError
from src.core.qrdqn_agent import LOWER_TAIL, UPPER_TAIL, AgentConfig, RiskProfile
from src.core.strategy_trainer import (
    DEFAULT_EPISODE_BUDGET, EarlyStopConfig, StrategyConfig, TrainingConfig, default_strategies,
)
from src.validators.config_validation import ConfigValidator, LineMap, build_line_map

logger = logging.getLogger(__name__)

DEFAULT_CUTOFFS = {LOWER_TAIL: 0.25, UPPER_TAIL: 0.75}


@dataclass
class RunConfig:
    """Everything one run template configures"""
    name: str
    env: EnvConfig
    specs: List[EquipmentSpec]
    agent: AgentConfig
    training: TrainingConfig
    strategies: Dict[str, StrategyConfig]
    seed: int = 0
    max_workers: int = 1
    baseline_episodes: int = 0
    source: Optional[str] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def select_strategies(self, names: Optional[Sequence[str]] = None) -> List[StrategyConfig]:
        """Strategies by name (all configured ones when `names` is empty)"""
        if not names:
            return list(self.strategies.values())
        unknown = [n for n in names if n not in self.strategies]
        if unknown:
            raise ConfigurationError(
                f"unknown strategy {', '.join(repr(n) for n in unknown)}; "
                f"valid options: {', '.join(self.strategies)}", self.source)
        return [self.strategies[n] for n in names]

    def with_episode_budget(self, episodes: int) -> 'RunConfig':
        """Copy with every strategy's budget replaced"""
        strategies = {n: replace(s, episode_budget=episodes) for n, s in self.strategies.items()}
        return replace(self, strategies=strategies)


def _section(raw: Dict[str, Any], name: str) -> Dict[str, Any]:
    return raw.get(name) or {}


def _build(cls, values: Dict[str, Any], source: Optional[str], line_map: LineMap, path: Tuple[Any, ...]):
    """Instantiate a config dataclass, attaching the section's line to any error"""
    known = {f.name for f in fields(cls)}
    try:
        return cls(**{k: v for k, v in values.items() if k in known})
    except ConfigurationError as e:
        raise ConfigurationError(str(e), source, _line(line_map, path))
    except TypeError as e:
        raise ConfigurationError(f"{'.'.join(str(p) for p in path)}: {e}", source, _line(line_map, path))


def _line(line_map: LineMap, path: Tuple[Any, ...]) -> Optional[int]:
    while path:
        if path in line_map:
            return line_map[path]
        path = path[:-1]
    return None


def _early_stop(value: Any) -> Optional[EarlyStopConfig]:
    if value is False or value is None:
        return None
    if value is True:
        return EarlyStopConfig()
    return EarlyStopConfig(**value)


def _strategies(raw: Dict[str, Any], training: TrainingConfig, source: Optional[str],
                line_map: LineMap) -> Dict[str, StrategyConfig]:
    """Built-in strategies plus template overrides; `training.episode_budget` is every strategy's default budget"""
    budget = int(_section(raw, 'training').get('episode_budget', DEFAULT_EPISODE_BUDGET))
    if budget < 0:
        raise ConfigurationError(f"episode_budget must be >= 0, got {budget}", source,
                                 _line(line_map, ('training', 'episode_budget')))
    strategies = default_strategies(budget, training.early_stop or EarlyStopConfig())
    if training.early_stop is None:
        strategies = {n: replace(s, early_stop=None) for n, s in strategies.items()}

    for name, knobs in _section(raw, 'strategies').items():
        knobs = knobs or {}
        path = ('strategies', name)
        base = strategies.get(name)
        if base is None and 'risk_profile' not in knobs:
            raise ConfigurationError(f"strategy '{name}' needs a risk_profile", source, _line(line_map, path))
        try:
            if 'risk_profile' in knobs or 'cutoff' in knobs:
                kind = knobs.get('risk_profile', base.risk_profile.kind if base else None)
                cutoff = knobs.get('cutoff', DEFAULT_CUTOFFS.get(kind, 1.0))
                profile = RiskProfile(kind, float(cutoff))
            else:
                profile = base.risk_profile
            strategies[name] = StrategyConfig(
                name=name,
                risk_profile=profile,
                lambda_multiplier=float(knobs.get('lambda_multiplier', base.lambda_multiplier if base else 1.0)),
                safety_multiplier=float(knobs.get('safety_multiplier', base.safety_multiplier if base else 1.0)),
                episode_budget=int(knobs.get('episode_budget', budget)),
                early_stop=replace(training.early_stop) if training.early_stop else None,
            )
        except ConfigurationError as e:
            raise ConfigurationError(str(e), source, _line(line_map, path))
    return strategies


def build_run_config(raw: Dict[str, Any], source: Optional[str] = None,
                     line_map: Optional[LineMap] = None) -> RunConfig:
    """Typed RunConfig from an already validated template dict"""
    line_map = line_map or {}
    run = _section(raw, 'run')

    specs = [_build(EquipmentSpec, unit, source, line_map, ('equipment', i))
             for i, unit in enumerate(raw.get('equipment') or [])]
    env = _build(EnvConfig, dict(_section(raw, 'environment'), n=len(specs)), source, line_map, ('environment',))
    agent = _build(AgentConfig, _section(raw, 'agent'), source, line_map, ('agent',))

    training_raw = dict(_section(raw, 'training'))
    try:
        training_raw['early_stop'] = _early_stop(training_raw.get('early_stop', True))
    except ConfigurationError as e:
        raise ConfigurationError(str(e), source, _line(line_map, ('training', 'early_stop')))
    training = _build(TrainingConfig, training_raw, source, line_map, ('training',))

    return RunConfig(
        name=run.get('name', Path(source).stem if source else 'maintenance_run'),
        env=env,
        specs=specs,
        agent=agent,
        training=training,
        strategies=_strategies(raw, training, source, line_map),
        seed=int(run.get('seed', 0)),
        max_workers=int(run.get('max_workers', 1)),
        baseline_episodes=int(run.get('baseline_episodes', 0)),
        source=source,
        metadata=dict(_section(raw, 'metadata')),
    )


def parse_template(text: str, source: Optional[str] = None) -> Tuple[Dict[str, Any], LineMap]:
    try:
        raw = yaml.safe_load(text)
        line_map = build_line_map(text)
    except yaml.YAMLError as e:
        mark = getattr(e, 'problem_mark', None)
        problem = getattr(e, 'problem', None) or str(e)
        raise ConfigurationError(f"YAML syntax error: {problem}", source, mark.line + 1 if mark else None)
    return raw, line_map


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """Load, validate and type a YAML run template"""
    source = str(path)
    try:
        with open(path, 'r') as f:
            text = f.read()
    except OSError as e:
        raise ConfigurationError(f"cannot read template: {e.strerror}", source)

    raw, line_map = parse_template(text, source)
    validator = ConfigValidator(raw, line_map, source)
    results = validator.validate()
    if results['validation_status'] == 'failed':
        issues = validator.issues()
        for issue in issues[1:]:
            logger.error(f"{source}:{issue['line']}: {issue['path']}: {issue['message']}")
        first = issues[0]
        raise ConfigurationError(f"{first['path']}: {first['message']}", source, first['line'])

    config = build_run_config(raw, source, line_map)
    logger.info(f"Loaded run template {source}: {len(config.specs)} units, "
                f"strategies {', '.join(config.strategies)}")
    return config
