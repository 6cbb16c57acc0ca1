#!/usr/bin/env python3
"""
Test multi-strategy comparison, ranking and the comparison report
"""

import json
from dataclasses import replace

import pytest

from src.analyzers.economic_analysis import RunSummary
from src.analyzers.strategy_report import render_markdown, write_report
from src.core.errors import TrainingError
from src.core.qrdqn_agent import QRDQNAgent
from src.core.scenario_orchestrator import (
    BaselineScenario, ScenarioOrchestrator, compare_scenarios, equipment_profile, rank_strategies,
)
from src.core.strategy_trainer import BALANCED, COST_EFFICIENT, SAFETY_FIRST, default_strategies


def _tiny_strategies(budget=2):
    return [replace(s, early_stop=None) for s in default_strategies(episode_budget=budget).values()]


def test_rank_strategies_descending_with_undefined_last():
    summaries = {
        'a': RunSummary(roi=1.5, stability_score=90.0, avg_reward_tail=10.0),
        'b': RunSummary(roi=float('nan'), stability_score=95.0, avg_reward_tail=30.0),
        'c': RunSummary(roi=3.0, stability_score=90.0, avg_reward_tail=20.0),
    }
    rankings = rank_strategies(summaries)
    assert rankings['roi'] == ['c', 'a', 'b']
    assert rankings['stability'] == ['b', 'a', 'c']
    assert rankings['avg_reward'] == ['b', 'c', 'a']


def test_equipment_profile(testbed_specs):
    profile = equipment_profile(testbed_specs)
    assert [u['id'] for u in profile] == ['CP-1', 'CDP-0', 'CP-2']
    assert [u['aging_multiplier'] for u in profile] == [0.95, 1.0, 1.05]
    assert profile[0]['criticality'] == 0.9


def test_orchestrator_rejects_duplicate_names(toy_specs, toy_config):
    orchestrator = ScenarioOrchestrator()
    orchestrator.register_scenario(BaselineScenario('random', toy_config, toy_specs, 1, 0))
    with pytest.raises(ValueError):
        orchestrator.register_scenario(BaselineScenario('random', toy_config, toy_specs, 1, 0))


def test_strategy_may_share_a_baseline_name(toy_specs, toy_config, small_agent_config, tiny_training):
    strategy = replace(_tiny_strategies()[1], name='random')
    report = compare_scenarios([strategy], toy_config, toy_specs, agent_config=small_agent_config,
                               training=tiny_training, baselines=['random'], baseline_episodes=2)

    assert report['failed'] == []
    assert report['recommendation'] == 'random'
    assert report['runs']['random']['run_status'] == 'completed'
    assert report['baselines']['random']['episodes_run'] == 2
    assert report['best_baseline'] == 'random'


def test_compare_scenarios_reports_every_strategy(toy_specs, toy_config, small_agent_config, tiny_training):
    report = compare_scenarios(_tiny_strategies(), toy_config, toy_specs, base_seed=3,
                               agent_config=small_agent_config, training=tiny_training,
                               baselines=['random', 'corrective'], baseline_episodes=2)

    assert report['strategies'] == [SAFETY_FIRST, BALANCED, COST_EFFICIENT]
    assert [report['runs'][n]['seed'] for n in report['strategies']] == [3, 4, 5]
    assert report['failed'] == []
    assert report['recommendation'] == report['rankings']['roi'][0]
    assert set(report['ranks']) == set(report['strategies'])
    assert set(report['baselines']) == {'random', 'corrective'}
    assert report['best_baseline'] in report['baselines']
    assert set(report['improvement_over_best_baseline_pct']) == set(report['strategies'])
    assert len(report['equipment']) == 2


def test_compare_scenarios_requires_a_strategy(toy_specs, toy_config):
    with pytest.raises(ValueError):
        compare_scenarios([], toy_config, toy_specs)


def test_failed_run_is_reported_but_unranked(toy_specs, toy_config, small_agent_config, tiny_training,
                                             monkeypatch):
    strategies = _tiny_strategies()
    config = replace(small_agent_config, warmup=32)

    def failing_step(self, buffer, beta):
        raise TrainingError("non-finite loss at train step 1")

    monkeypatch.setattr(QRDQNAgent, 'train_step', failing_step)
    report = compare_scenarios(strategies[:1], toy_config, toy_specs, agent_config=config,
                               training=tiny_training)
    assert report['failed'] == [SAFETY_FIRST]
    assert report['runs'][SAFETY_FIRST]['status'] == 'failed'
    assert report['runs'][SAFETY_FIRST]['run_status'] == 'aborted'
    assert report['recommendation'] is None
    assert report['ranks'] == {}
    assert "none (all runs failed)" in render_markdown(report)


def test_report_markdown_contents(toy_specs, toy_config, small_agent_config, tiny_training):
    report = compare_scenarios(_tiny_strategies(), toy_config, toy_specs, base_seed=0,
                               agent_config=small_agent_config, training=tiny_training)
    text = render_markdown(report)
    assert text.startswith("# Maintenance Strategy Comparison")
    assert f"**Recommended strategy**: {report['recommendation']} (highest ROI)" in text
    for name in report['strategies']:
        assert f"| {name} |" in text
    assert "| P-A |" in text and "| P-B |" in text
    assert "Conventional Baselines" not in text


def test_comparison_report_is_byte_identical_across_reruns(tmp_path, toy_specs, toy_config,
                                                           small_agent_config, tiny_training):
    """Same config and seed give the same report files"""
    outputs = []
    for run in ('first', 'second'):
        report = compare_scenarios(_tiny_strategies(), toy_config, toy_specs, base_seed=1,
                                   agent_config=small_agent_config, training=tiny_training,
                                   output_dir=tmp_path / run)
        paths = write_report(report, tmp_path / run)
        outputs.append({name: path.read_bytes() for name, path in paths.items()})
    assert outputs[0] == outputs[1]

    parsed = json.loads(outputs[0]['comparison.json'])
    assert parsed['strategies'] == [SAFETY_FIRST, BALANCED, COST_EFFICIENT]


def test_strategy_runs_write_private_artifacts(tmp_path, toy_specs, toy_config, small_agent_config, tiny_training):
    compare_scenarios(_tiny_strategies(), toy_config, toy_specs, agent_config=small_agent_config,
                      training=tiny_training, output_dir=tmp_path)
    for name in (SAFETY_FIRST, BALANCED, COST_EFFICIENT):
        run_dir = tmp_path / name
        assert {p.name for p in run_dir.iterdir()} == {'metrics.csv', 'summary.json', 'checkpoint.bin'}
        summary = json.loads((run_dir / 'summary.json').read_text())
        assert summary['strategy'] == name
        assert summary['run_status'] == 'completed'


def test_write_report_never_overwrites(tmp_path, toy_specs, toy_config, small_agent_config, tiny_training):
    report = compare_scenarios(_tiny_strategies(budget=1), toy_config, toy_specs,
                               agent_config=small_agent_config, training=tiny_training)
    first = write_report(report, tmp_path)
    second = write_report(report, tmp_path)
    assert first['comparison_report.md'].name == 'comparison_report.md'
    assert second['comparison_report.md'].name == 'comparison_report_1.md'
    assert second['comparison.json'].name == 'comparison_1.json'
