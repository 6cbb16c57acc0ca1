#!/usr/bin/env python3
"""
Strategy comparison report
Renders the comparison report as markdown (head-to-head table, rankings,
baselines, recommendation) and as JSON. No timestamps: a rerun with the same
config and seed yields byte-identical files.
"""

import math
from pathlib import Path
from typing import Any, Dict, Optional, Union

from src.utils.artifacts import artifact_paths, write_json

REPORT_ARTIFACTS = ('comparison_report.md', 'comparison.json')


def _fmt(value: Optional[float], spec: str = ".2f", suffix: str = "") -> str:
    if value is None or (isinstance(value, float) and not math.isfinite(value)):
        return "n/a"
    return f"{value:{spec}}{suffix}"


def render_markdown(report: Dict[str, Any], title: str = "Maintenance Strategy Comparison") -> str:
    """Markdown rendering of a compare_scenarios report"""
    lines = [f"# {title}", ""]

    lines += ["## Summary", ""]
    lines.append(f"- Strategies compared: {', '.join(report['strategies'])}")
    lines.append(f"- Base seed: {report['base_seed']}")
    if report['failed']:
        lines.append(f"- Failed runs: {', '.join(report['failed'])}")
    lines.append("")

    lines += ["## Equipment Profile", ""]
    lines.append("| Unit | Age (y) | Aging factor | Lifecycle stage | Multiplier | Criticality |")
    lines.append("|------|---------|--------------|-----------------|------------|-------------|")
    for unit in report['equipment']:
        lines.append(f"| {unit['id']} | {unit['install_age_years']:.1f} | {unit['aging_coeff']:.3f} | "
                     f"{unit['aging_class']} | {unit['aging_multiplier']:.2f} | "
                     f"{unit['criticality_class']} ({unit['criticality']:.2f}) |")
    lines.append("")

    lines += ["## Strategy Comparison", ""]
    lines.append("| Strategy | Status | Episodes | Avg Reward | Reward Std | CV % | Stability | "
                 "Avg Cost | Total Cost | ROI | Anomaly Response |")
    lines.append("|----------|--------|----------|------------|------------|------|-----------|"
                 "----------|------------|-----|------------------|")
    for name in report['strategies']:
        run = report['runs'][name]
        s = run['summary']
        lines.append(
            f"| {name} | {run['run_status']} | {s['episodes_run']} | {_fmt(s['avg_reward_tail'])} | "
            f"{_fmt(s['reward_std_tail'])} | {_fmt(s['cv_percent'])} | {_fmt(s['stability_score'])} | "
            f"{_fmt(s['avg_cost_tail'])} | {_fmt(s['total_cost_all'])} | {_fmt(s['roi'], '.3f')} | "
            f"{_fmt(s['anomaly_response_rate'], '.1%')} |")
    lines.append("")

    lines += ["## Rankings", ""]
    if report['ranks']:
        lines.append("| Strategy | ROI | Stability | Avg Reward |")
        lines.append("|----------|-----|-----------|------------|")
        for name in report['rankings']['roi']:
            r = report['ranks'][name]
            lines.append(f"| {name} | {r['roi']} | {r['stability']} | {r['avg_reward']} |")
    else:
        lines.append("No strategy completed successfully.")
    lines.append("")

    lines += ["## Stability Bands", ""]
    for name in report['strategies']:
        band = report['runs'][name]['summary'].get('stability_band')
        lines.append(f"- {name}: {band or 'n/a'}")
    lines.append("")

    if report['baselines']:
        lines += ["## Conventional Baselines", ""]
        lines.append("| Policy | Avg Reward | Avg Cost | ROI |")
        lines.append("|--------|------------|----------|-----|")
        for name, s in report['baselines'].items():
            lines.append(f"| {name} | {_fmt(s['avg_reward_tail'])} | {_fmt(s['avg_cost_tail'])} | "
                         f"{_fmt(s['roi'], '.3f')} |")
        lines.append("")
        lines.append(f"Improvement over best baseline ({report['best_baseline']}):")
        lines.append("")
        for name, pct in report['improvement_over_best_baseline_pct'].items():
            lines.append(f"- {name}: {_fmt(pct, '+.1f', '%')}")
        lines.append("")

    lines += ["## Recommendation", ""]
    if report['recommendation']:
        lines.append(f"**Recommended strategy**: {report['recommendation']} (highest ROI)")
        eff = report.get('efficiency')
        if eff:
            lines.append("")
            lines.append(f"{eff['candidate']} spends {_fmt(eff['investment_pct'], '+.1f', '%')} relative to "
                         f"{eff['reference']} for {_fmt(eff['performance_pct'], '+.1f', '%')} average reward.")
    else:
        lines.append("**Recommended strategy**: none (all runs failed)")
    lines.append("")
    return "\n".join(lines)


def write_report(report: Dict[str, Any], output_dir: Union[str, Path]) -> Dict[str, Path]:
    """Write comparison_report.md and comparison.json (numeric suffix if they exist)"""
    paths = artifact_paths(output_dir, REPORT_ARTIFACTS)
    with open(paths['comparison_report.md'], 'w') as f:
        f.write(render_markdown(report))
    write_json(report, paths['comparison.json'])
    return paths
