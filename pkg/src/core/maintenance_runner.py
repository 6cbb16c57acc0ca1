#!/usr/bin/env python3
"""
Maintenance Runner - Automated Strategy Training System
Runs train / evaluate / compare / export workflows from YAML run templates.

Usage:
    python -m src.core.maintenance_runner train --config templates/cbm_testbed.yaml --strategy balanced
    python -m src.core.maintenance_runner compare --config templates/cbm_testbed.yaml --out results/
"""

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from dotenv import find_dotenv, load_dotenv

from src.analyzers.baseline_policies import baseline_factories
from src.analyzers.economic_analysis import summarize_run
from src.analyzers.strategy_report import write_report
from src.core.config_loader import RunConfig, load_run_config
from src.core.errors import CheckpointError, ConfigurationError, MetricsFormatError
from src.core.qrdqn_agent import QRDQNAgent
from src.core.scenario_orchestrator import compare_scenarios
from src.core.strategy_trainer import (
    ABORTED, BALANCED, StrategyConfig, evaluate_agent, run_training, strategy_env_config,
)
from src.utils.artifacts import SUPPORTED_FORMATS, artifact_paths, export_metrics, write_json, write_metrics_csv

COMMANDS = ('train', 'evaluate', 'compare', 'export')
TRAIN_ARTIFACTS = ('metrics.csv', 'summary.json', 'checkpoint.bin')
EVAL_ARTIFACTS = ('eval_metrics.csv', 'eval_summary.json')
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
DEFAULT_OUTPUT_DIR = 'results'

EXIT_OK = 0
EXIT_RUN_FAILED = 1
EXIT_USAGE = 2


def resolve_output_dir(out: Optional[str]) -> Path:
    """--out wins; otherwise CBM_OUTPUT_DIR (from the environment or a .env file)"""
    load_dotenv(find_dotenv(usecwd=True))
    return Path(out or os.getenv('CBM_OUTPUT_DIR') or DEFAULT_OUTPUT_DIR)


def setup_logging(output_dir: Path) -> logging.Handler:
    """Console logging plus a run.log sidecar in the output directory"""
    logging.basicConfig(level=logging.INFO, format=LOG_FORMAT)
    output_dir.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(output_dir / 'run.log')
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    logging.getLogger().addHandler(handler)
    return handler


class MaintenanceRunner:
    def __init__(self, config_path: str, output_dir: Path, seed: Optional[int] = None,
                 episodes: Optional[int] = None, workers: Optional[int] = None, verbose: bool = False):
        """Initialize with a run template"""
        self.config_path = config_path
        self.config = self.load_config(seed, episodes, workers, verbose)
        self.output_dir = Path(output_dir)
        self.logger = logging.getLogger(__name__)

    def load_config(self, seed: Optional[int], episodes: Optional[int], workers: Optional[int],
                    verbose: bool) -> RunConfig:
        """Load the template and apply command-line overrides"""
        config = load_run_config(self.config_path)
        if episodes is not None:
            config = config.with_episode_budget(episodes)
        if seed is not None:
            config = replace(config, seed=seed)
        if workers is not None:
            config = replace(config, max_workers=workers)
        return replace(config, training=replace(config.training, verbose=verbose))

    def pick_strategy(self, names: Sequence[str]) -> StrategyConfig:
        """Single-strategy commands: the named strategy, else balanced (or the first configured)"""
        if len(names) > 1:
            raise ConfigurationError(f"this command takes one --strategy, got {len(names)}", self.config_path)
        if names:
            return self.config.select_strategies(names)[0]
        return self.config.strategies.get(BALANCED) or next(iter(self.config.strategies.values()))

    def describe(self) -> List[str]:
        cfg = self.config
        lines = [f"Run: {cfg.name} (seed {cfg.seed})",
                 f"Equipment: {', '.join(s.id for s in cfg.specs)} ({cfg.env.n_actions} joint actions)",
                 f"Episode length: {cfg.env.episode_length} months"]
        for strategy in cfg.strategies.values():
            lines.append(f"Strategy {strategy.name}: {strategy.risk_profile.describe()}, "
                         f"{strategy.episode_budget} episodes")
        return lines

    def train(self, strategy_names: Sequence[str] = ()) -> Dict[str, Any]:
        """Train one strategy and write metrics, summary and checkpoint"""
        strategy = self.pick_strategy(strategy_names)
        cfg = self.config
        self.logger.info(f"Training strategy {strategy.name} with seed {cfg.seed}")

        result = run_training(strategy, cfg.env, cfg.specs, cfg.agent, cfg.training, cfg.seed)
        names = TRAIN_ARTIFACTS if result.status != ABORTED else TRAIN_ARTIFACTS[:2]
        paths = artifact_paths(self.output_dir, names)
        write_metrics_csv(result.metrics, paths['metrics.csv'])
        write_json(dict(result.summary.to_dict(), strategy=strategy.name, seed=cfg.seed,
                        run_status=result.status, train_steps=result.train_steps, error=result.error),
                   paths['summary.json'])
        if 'checkpoint.bin' in paths:
            result.agent.save_checkpoint(paths['checkpoint.bin'], strategy.name)

        if result.status == ABORTED:
            return {'status': 'failed', 'error': result.error, 'artifacts': paths, 'summary': result.summary}
        return {'status': 'success', 'run_status': result.status, 'episodes': len(result.metrics),
                'artifacts': paths, 'summary': result.summary}

    def evaluate(self, checkpoint: str, episodes: Optional[int] = None,
                 strategy_names: Sequence[str] = ()) -> Dict[str, Any]:
        """Greedy eval-mode rollouts of a saved agent; no learning"""
        cfg = self.config
        agent = QRDQNAgent(cfg.env.state_dim, cfg.env.n, cfg.agent, seed=cfg.seed)
        try:
            header = agent.load_checkpoint(checkpoint)
        except OSError as e:
            raise CheckpointError(f"cannot read checkpoint {checkpoint}: {e.strerror}", field='path')

        names = list(strategy_names) or ([header['strategy']] if header.get('strategy') in cfg.strategies else [])
        strategy = self.pick_strategy(names)
        episodes = cfg.training.eval_tail if episodes is None else episodes
        self.logger.info(f"Evaluating {checkpoint} as {strategy.name} for {episodes} episodes")

        env_config = strategy_env_config(cfg.env, strategy)
        metrics = evaluate_agent(agent, env_config, cfg.specs, strategy.risk_profile, episodes, cfg.seed)
        summary = summarize_run(metrics, eval_tail=max(episodes, 1))

        paths = artifact_paths(self.output_dir, EVAL_ARTIFACTS)
        write_metrics_csv(metrics, paths['eval_metrics.csv'])
        write_json(dict(summary.to_dict(), strategy=strategy.name, seed=cfg.seed,
                        checkpoint_strategy=header.get('strategy')), paths['eval_summary.json'])
        return {'status': 'success', 'episodes': episodes, 'artifacts': paths, 'summary': summary}

    def compare(self, strategy_names: Sequence[str] = ()) -> Dict[str, Any]:
        """Train each strategy independently and write the comparison report"""
        cfg = self.config
        strategies = cfg.select_strategies(strategy_names)
        baselines = list(baseline_factories(cfg.seed)) if cfg.baseline_episodes > 0 else []
        report = compare_scenarios(strategies, cfg.env, cfg.specs, base_seed=cfg.seed,
                                   agent_config=cfg.agent, training=cfg.training,
                                   max_workers=cfg.max_workers, output_dir=self.output_dir,
                                   baselines=baselines, baseline_episodes=cfg.baseline_episodes)
        paths = write_report(report, self.output_dir)
        status = 'failed' if report['failed'] else 'success'
        error = f"failed runs: {', '.join(report['failed'])}" if report['failed'] else None
        return {'status': status, 'error': error, 'report': report, 'artifacts': paths}


def export(metrics_path: str, fmt: str, output_dir: Path) -> Path:
    """Convert a metrics file into `fmt` inside the output directory"""
    if fmt not in SUPPORTED_FORMATS:
        raise ValueError(f"unsupported format '{fmt}'; supported formats: {', '.join(SUPPORTED_FORMATS)}")
    name = f"{Path(metrics_path).stem}.{fmt}"
    destination = artifact_paths(output_dir, [name])[name]
    return export_metrics(metrics_path, fmt, destination)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='Train and compare risk-stratified maintenance strategies')
    parser.add_argument('command', choices=COMMANDS, help='Workflow to run')
    parser.add_argument('--config', help='Path to YAML run template')
    parser.add_argument('--seed', type=int, help='Base seed (overrides run.seed)')
    parser.add_argument('--out', help='Output directory (default: $CBM_OUTPUT_DIR or results/)')
    parser.add_argument('--strategy', action='append', default=[], help='Strategy name (repeatable)')
    parser.add_argument('--checkpoint', help='Checkpoint to evaluate')
    parser.add_argument('--episodes', type=int, help='Episode budget (train/compare) or count (evaluate)')
    parser.add_argument('--format', default='csv', help='Export format: csv or json')
    parser.add_argument('--metrics', help='Metrics file to export')
    parser.add_argument('--workers', type=int, help='Parallel strategy runs for compare')
    parser.add_argument('--verbose', action='store_true', help='Show training progress bars')
    parser.add_argument('--dry-run', action='store_true', help='Validate template without running')
    return parser


def _usage_problem(args: argparse.Namespace) -> Optional[str]:
    if args.command == 'export':
        return None if args.metrics else "export needs --metrics"
    if not args.config:
        return f"{args.command} needs --config"
    if args.command == 'evaluate' and not args.checkpoint and not args.dry_run:
        return "evaluate needs --checkpoint"
    if args.episodes is not None and args.episodes < 0:
        return f"--episodes must be >= 0, got {args.episodes}"
    return None


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    problem = _usage_problem(args)
    if problem:
        print(f"Error: {problem}", file=sys.stderr)
        return EXIT_USAGE

    output_dir = resolve_output_dir(args.out)
    handler = setup_logging(output_dir)
    try:
        if args.command == 'export':
            path = export(args.metrics, args.format, output_dir)
            print(f"✅ Exported {args.metrics} to {path}")
            return EXIT_OK

        runner = MaintenanceRunner(args.config, output_dir, seed=args.seed, episodes=args.episodes,
                                   workers=args.workers, verbose=args.verbose)
        if args.dry_run:
            print("Template loaded successfully!")
            for line in runner.describe():
                print(line)
            return EXIT_OK

        if args.command == 'train':
            result = runner.train(args.strategy)
        elif args.command == 'evaluate':
            result = runner.evaluate(args.checkpoint, args.episodes, args.strategy)
        else:
            result = runner.compare(args.strategy)
    except (ConfigurationError, CheckpointError, MetricsFormatError, ValueError, OSError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_USAGE
    finally:
        logging.getLogger().removeHandler(handler)
        handler.close()

    if result['status'] == 'success':
        print(f"\n✅ {args.command} completed successfully!")
        for name, path in result['artifacts'].items():
            print(f"  - {name}: {path}")
        if args.command == 'compare':
            print(f"Recommended strategy: {result['report']['recommendation']}")
        return EXIT_OK

    print(f"\n❌ {args.command} failed: {result['error']}", file=sys.stderr)
    return EXIT_RUN_FAILED


if __name__ == "__main__":
    sys.exit(main())
