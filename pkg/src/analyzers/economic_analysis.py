#!/usr/bin/env python3
"""
Economic Analysis of maintenance training runs
Episode metrics, coefficient-of-variation stability scoring, ROI and run summaries
"""

import math
from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional, Sequence

import pandas as pd

from src.core.errors import DomainError, UndefinedROIError

# Metrics file schema, one row per episode
METRICS_COLUMNS = ['episode', 'total_reward', 'total_cost', 'risk', 'cost', 'leveling',
                   'safety', 'action', 'anomalous_steps']
INTEGER_COLUMNS = ('episode', 'anomalous_steps')


@dataclass
class EpisodeMetrics:
    episode: int
    total_reward: float = 0.0
    total_cost: float = 0.0
    risk: float = 0.0
    cost: float = 0.0
    leveling: float = 0.0
    safety: float = 0.0
    action: float = 0.0
    anomalous_steps: int = 0
    # not part of the metrics file
    anomalous_decisions: int = 0
    anomaly_interventions: int = 0
    interventions: int = 0
    unit_steps: int = 0
    mean_loss: Optional[float] = None

    def record_step(self, breakdown, spend: float, conditions_before: Sequence[int],
                    codes: Sequence[int], conditions_after: Sequence[int]):
        """Fold one environment step into the episode totals"""
        self.total_reward += breakdown.total
        self.total_cost += spend
        self.risk += breakdown.risk
        self.cost += breakdown.cost
        self.leveling += breakdown.leveling
        self.safety += breakdown.safety
        self.action += breakdown.action
        if any(conditions_after):
            self.anomalous_steps += 1
        for before, code in zip(conditions_before, codes):
            self.unit_steps += 1
            if code:
                self.interventions += 1
            if before:
                self.anomalous_decisions += 1
                if code:
                    self.anomaly_interventions += 1

    def to_row(self) -> Dict[str, Any]:
        return {col: getattr(self, col) for col in METRICS_COLUMNS}


def metrics_frame(metrics: Sequence[EpisodeMetrics]) -> pd.DataFrame:
    """All EpisodeMetrics fields as a DataFrame (empty frame keeps the columns)"""
    columns = list(EpisodeMetrics.__dataclass_fields__)
    return pd.DataFrame([asdict(m) for m in metrics], columns=columns)


def _finite_or_none(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


@dataclass
class RunSummary:
    avg_reward_tail: float = float('nan')
    reward_std_tail: float = float('nan')
    cv_percent: float = float('nan')
    stability_score: float = float('nan')
    avg_cost_tail: float = float('nan')
    roi: float = float('nan')
    episodes_run: int = 0
    total_cost_all: float = 0.0
    anomaly_response_rate: float = float('nan')
    maintenance_rate: float = float('nan')
    stability_band: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        """JSON-safe dict; non-finite numbers become None"""
        return {k: _finite_or_none(v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'RunSummary':
        values = {}
        for name, f in cls.__dataclass_fields__.items():
            if name not in data:
                continue
            v = data[name]
            values[name] = float('nan') if v is None and f.type is float else v
        return cls(**values)


def coefficient_of_variation(mean: float, std: float) -> float:
    """CV in percent, infinite when the mean is zero"""
    if mean == 0:
        return float('inf')
    return std / abs(mean) * 100.0


def stability_score(cv_percent: float) -> float:
    """Map CV (%) onto a 0-100 stability rating, linear within each band"""
    if cv_percent < 0 or math.isnan(cv_percent):
        raise DomainError(f"CV must be >= 0, got {cv_percent}")
    if cv_percent < 10:
        return 100.0 - cv_percent
    if cv_percent < 20:
        return 90.0 - 2.0 * (cv_percent - 10.0)
    if cv_percent < 50:
        return 70.0 - (4.0 / 3.0) * (cv_percent - 20.0)
    return max(0.0, 30.0 - 0.6 * (cv_percent - 50.0))


def stability_band(cv_percent: float) -> str:
    """Usage label for the CV band"""
    if cv_percent < 0 or math.isnan(cv_percent):
        raise DomainError(f"CV must be >= 0, got {cv_percent}")
    if cv_percent < 10:
        return 'excellent (critical applications)'
    elif cv_percent < 20:
        return 'good (standard operations)'
    elif cv_percent < 50:
        return 'acceptable (non-critical systems)'
    else:
        return 'unsuitable for industrial use'


def roi(avg_reward: float, avg_cost: float) -> float:
    """Cost efficiency ratio: average episode reward per unit of average episode cost"""
    if not avg_cost > 0:
        raise UndefinedROIError(f"ROI undefined for average cost {avg_cost}")
    return avg_reward / avg_cost


def relative_efficiency(candidate: RunSummary, reference: RunSummary) -> Dict[str, float]:
    """Extra spend and extra reward of `candidate` over `reference`, in percent"""
    investment = float('nan')
    performance = float('nan')
    if reference.avg_cost_tail and math.isfinite(reference.avg_cost_tail):
        investment = (candidate.avg_cost_tail - reference.avg_cost_tail) / reference.avg_cost_tail * 100.0
    if reference.avg_reward_tail and math.isfinite(reference.avg_reward_tail):
        performance = (candidate.avg_reward_tail - reference.avg_reward_tail) / abs(reference.avg_reward_tail) * 100.0
    return {'investment_pct': investment, 'performance_pct': performance}


def _safe_ratio(numerator: float, denominator: float) -> float:
    return numerator / denominator if denominator else float('nan')


def summarize_run(metrics: Sequence[EpisodeMetrics], eval_tail: int = 100) -> RunSummary:
    """Summary statistics over the final `eval_tail` episodes (population std)"""
    if not metrics:
        return RunSummary()

    df = metrics_frame(metrics)
    tail = df.tail(eval_tail)
    avg_reward = float(tail['total_reward'].mean())
    std_reward = float(tail['total_reward'].std(ddof=0))
    avg_cost = float(tail['total_cost'].mean())

    cv = coefficient_of_variation(avg_reward, std_reward)
    try:
        ratio = roi(avg_reward, avg_cost)
    except UndefinedROIError:
        ratio = float('nan')

    return RunSummary(
        avg_reward_tail=avg_reward,
        reward_std_tail=std_reward,
        cv_percent=cv,
        stability_score=stability_score(cv),
        avg_cost_tail=avg_cost,
        roi=ratio,
        episodes_run=len(df),
        total_cost_all=float(df['total_cost'].sum()),
        anomaly_response_rate=_safe_ratio(float(tail['anomaly_interventions'].sum()),
                                          float(tail['anomalous_decisions'].sum())),
        maintenance_rate=_safe_ratio(float(tail['interventions'].sum()), float(tail['unit_steps'].sum())),
        stability_band=stability_band(cv),
    )
