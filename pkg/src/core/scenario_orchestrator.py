#!/usr/bin/env python3
"""
Scenario Orchestrator for multi-strategy comparison
Each scenario (a learned strategy or a conventional baseline) is an
independent unit of work with its own seed, logger and output directory.
The orchestrator runs them sequentially or in a process pool and joins
their status dictionaries into one comparison report.
"""

import logging
import math
import multiprocessing as mp
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from src.analyzers.baseline_policies import evaluate_baseline
from src.analyzers.economic_analysis import RunSummary, relative_efficiency, summarize_run
from src.core.cbm_environment import (
    EnvConfig, EquipmentSpec, aging_class, aging_multiplier, criticality_class,
)
from src.core.qrdqn_agent import AgentConfig
from src.core.strategy_trainer import (
    ABORTED, StrategyConfig, TrainingConfig, run_training,
)
from src.utils.artifacts import artifact_paths, write_json, write_metrics_csv

RUN_ARTIFACTS = ('metrics.csv', 'summary.json', 'checkpoint.bin')
RANKING_KEYS = {
    'roi': 'roi',
    'stability': 'stability_score',
    'avg_reward': 'avg_reward_tail',
}


class ScenarioBase(ABC):
    """Base class for one comparison scenario"""

    def __init__(self, name: str, env_config: EnvConfig, specs: Sequence[EquipmentSpec], seed: int,
                 output_dir: Optional[Path] = None):
        self.name = name
        self.env_config = env_config
        self.specs = list(specs)
        self.seed = seed
        self.output_dir = Path(output_dir) / name if output_dir else None
        self.logger = logging.getLogger(f"scenario.{name}")

    @property
    def kind(self) -> str:
        return 'scenario'

    @property
    def key(self) -> str:
        """Registry key; a strategy and a baseline may share a name"""
        return f"{self.kind}:{self.name}"

    @abstractmethod
    def execute(self) -> Dict[str, Any]:
        """Run the scenario and return its status dictionary"""
        pass

    def save_output(self, metrics, summary: RunSummary, extra: Dict[str, Any],
                    checkpoint: Optional[bytes] = None) -> Dict[str, str]:
        """Write this scenario's artifacts into its private subdirectory"""
        if self.output_dir is None:
            return {}
        names = RUN_ARTIFACTS if checkpoint is not None else RUN_ARTIFACTS[:2]
        paths = artifact_paths(self.output_dir, names)
        write_metrics_csv(metrics, paths['metrics.csv'])
        write_json(dict(summary.to_dict(), **extra), paths['summary.json'])
        if checkpoint is not None:
            with open(paths['checkpoint.bin'], 'wb') as f:
                f.write(checkpoint)
        self.logger.info(f"Artifacts saved to {self.output_dir}")
        return {name: str(path) for name, path in paths.items()}


class StrategyScenario(ScenarioBase):
    """Trains one risk-stratified strategy"""

    def __init__(self, strategy: StrategyConfig, env_config: EnvConfig, specs: Sequence[EquipmentSpec],
                 agent_config: AgentConfig, training: TrainingConfig, seed: int,
                 output_dir: Optional[Path] = None):
        super().__init__(strategy.name, env_config, specs, seed, output_dir)
        self.strategy = strategy
        self.agent_config = agent_config
        self.training = training

    @property
    def kind(self) -> str:
        return 'strategy'

    def execute(self) -> Dict[str, Any]:
        self.logger.info(f"Starting strategy run with seed {self.seed}")
        result = run_training(self.strategy, self.env_config, self.specs, self.agent_config,
                              self.training, self.seed, run_logger=self.logger)
        extra = {'strategy': self.name, 'seed': self.seed, 'run_status': result.status,
                 'train_steps': result.train_steps, 'error': result.error}
        checkpoint = result.agent.to_bytes(self.name) if result.status != ABORTED else None
        artifacts = self.save_output(result.metrics, result.summary, extra, checkpoint)
        return {
            'status': 'failed' if result.status == ABORTED else 'success',
            'name': self.name,
            'kind': self.kind,
            'seed': self.seed,
            'run_status': result.status,
            'error': result.error,
            'summary': result.summary,
            'metrics': result.metrics,
            'artifacts': artifacts,
        }


class BaselineScenario(ScenarioBase):
    """Evaluates one conventional maintenance policy"""

    def __init__(self, baseline: str, env_config: EnvConfig, specs: Sequence[EquipmentSpec],
                 episodes: int, seed: int, output_dir: Optional[Path] = None):
        super().__init__(baseline, env_config, specs, seed, output_dir)
        self.episodes = episodes

    @property
    def kind(self) -> str:
        return 'baseline'

    def execute(self) -> Dict[str, Any]:
        metrics = evaluate_baseline(self.name, self.env_config, self.specs, self.episodes, self.seed)
        summary = summarize_run(metrics, eval_tail=max(self.episodes, 1))
        return {'status': 'success', 'name': self.name, 'kind': self.kind, 'seed': self.seed,
                'run_status': 'completed', 'error': None, 'summary': summary,
                'metrics': metrics, 'artifacts': {}}


def _execute_scenario(scenario: ScenarioBase) -> Dict[str, Any]:
    try:
        return scenario.execute()
    except Exception as e:
        scenario.logger.error(f"Error in scenario {scenario.name}: {e}")
        return {'status': 'failed', 'name': scenario.name, 'kind': scenario.kind, 'seed': scenario.seed,
                'run_status': 'failed', 'error': f"{type(e).__name__}: {e}",
                'summary': RunSummary(), 'metrics': [], 'artifacts': {}}


class ScenarioOrchestrator:
    """Runs registered scenarios and collects their results, keyed `kind:name`, in registration order"""

    def __init__(self, max_workers: int = 1):
        self.scenarios: Dict[str, ScenarioBase] = {}
        self.max_workers = max(1, int(max_workers))
        self.logger = logging.getLogger("scenario.orchestrator")

    def register_scenario(self, scenario: ScenarioBase):
        if scenario.key in self.scenarios:
            raise ValueError(f"scenario '{scenario.key}' registered twice")
        self.scenarios[scenario.key] = scenario
        self.logger.info(f"Registered {scenario.kind} scenario: {scenario.name}")

    def execute_all(self) -> Dict[str, Dict[str, Any]]:
        scenarios = list(self.scenarios.values())
        workers = min(self.max_workers, len(scenarios))
        if workers > 1:
            self.logger.info(f"Running {len(scenarios)} scenarios on {workers} workers")
            with mp.Pool(processes=workers) as pool:
                outputs = pool.map(_execute_scenario, scenarios)
        else:
            outputs = [_execute_scenario(s) for s in scenarios]
        return {s.key: out for s, out in zip(scenarios, outputs)}


def _rank_value(value: float) -> float:
    return value if value is not None and math.isfinite(value) else -math.inf


def _cost_value(summary: RunSummary) -> float:
    cost = summary.avg_cost_tail
    return cost if cost is not None and math.isfinite(cost) else math.inf


def rank_strategies(summaries: Dict[str, RunSummary]) -> Dict[str, List[str]]:
    """Descending order per criterion; ties and undefined values keep input order"""
    rankings = {}
    for criterion, attr in RANKING_KEYS.items():
        rankings[criterion] = sorted(summaries, key=lambda n: -_rank_value(getattr(summaries[n], attr)))
    return rankings


def equipment_profile(specs: Sequence[EquipmentSpec]) -> List[Dict[str, Any]]:
    return [{
        'id': spec.id,
        'install_age_years': spec.install_age_years,
        'aging_coeff': spec.aging_coeff,
        'aging_class': aging_class(spec.install_age_years),
        'aging_multiplier': aging_multiplier(spec.install_age_years),
        'criticality': spec.criticality,
        'criticality_class': criticality_class(spec.criticality),
        'repair_cost': spec.repair_cost,
        'replace_cost': spec.replace_cost,
    } for spec in specs]


def compare_scenarios(strategies: Sequence[StrategyConfig], env_config: EnvConfig,
                      specs: Sequence[EquipmentSpec], base_seed: int = 0,
                      agent_config: Optional[AgentConfig] = None, training: Optional[TrainingConfig] = None,
                      max_workers: int = 1, output_dir: Optional[Path] = None,
                      baselines: Sequence[str] = (), baseline_episodes: int = 0) -> Dict[str, Any]:
    """
    Train every strategy independently (seed = base_seed + index) and build the
    comparison report. Failed runs are reported but left out of the rankings.
    """
    if not strategies:
        raise ValueError("at least one strategy is required")
    agent_config = agent_config or AgentConfig()

    orchestrator = ScenarioOrchestrator(max_workers)
    for i, strategy in enumerate(strategies):
        run_training_cfg = training or TrainingConfig()
        orchestrator.register_scenario(StrategyScenario(strategy, env_config, specs, agent_config,
                                                        run_training_cfg, base_seed + i, output_dir))
    for baseline in baselines:
        orchestrator.register_scenario(BaselineScenario(baseline, env_config, specs,
                                                        baseline_episodes, base_seed))
    outcomes = orchestrator.execute_all()

    names = [s.name for s in strategies]
    results = {n: outcomes[f"strategy:{n}"] for n in names}
    baseline_results = {b: outcomes[f"baseline:{b}"] for b in baselines}
    succeeded = {n: results[n]['summary'] for n in names if results[n]['status'] == 'success'}
    rankings = rank_strategies(succeeded)
    ranks = {n: {c: order.index(n) + 1 for c, order in rankings.items()} for n in succeeded}
    recommendation = rankings['roi'][0] if succeeded else None

    baseline_summaries = {b: r['summary'] for b, r in baseline_results.items() if r['status'] == 'success'}
    improvement = {}
    best_baseline = None
    if baseline_summaries:
        best_baseline = max(baseline_summaries, key=lambda b: _rank_value(baseline_summaries[b].avg_reward_tail))
        reference = baseline_summaries[best_baseline]
        for n, summary in succeeded.items():
            improvement[n] = relative_efficiency(summary, reference)['performance_pct']

    efficiency = None
    if recommendation is not None and len(succeeded) > 1:
        cheapest = min(succeeded, key=lambda n: _cost_value(succeeded[n]))
        if cheapest != recommendation:
            efficiency = dict(relative_efficiency(succeeded[recommendation], succeeded[cheapest]),
                              candidate=recommendation, reference=cheapest)

    return {
        'base_seed': base_seed,
        'strategies': names,
        'runs': {n: {
            'status': results[n]['status'],
            'run_status': results[n]['run_status'],
            'seed': results[n]['seed'],
            'error': results[n]['error'],
            'summary': results[n]['summary'].to_dict(),
        } for n in names},
        'rankings': rankings,
        'ranks': ranks,
        'recommendation': recommendation,
        'baselines': {b: s.to_dict() for b, s in baseline_summaries.items()},
        'best_baseline': best_baseline,
        'improvement_over_best_baseline_pct': improvement,
        'efficiency': efficiency,
        'equipment': equipment_profile(specs),
        'failed': [n for n in names if results[n]['status'] != 'success'],
    }
