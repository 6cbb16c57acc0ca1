#!/usr/bin/env python3
"""
Run artifacts - output paths and metrics table I/O
Existing artifacts are never overwritten: a rerun into the same directory gets
the next free numeric suffix (metrics.csv, metrics_1.csv, ...).
"""

import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Sequence, Union

import pandas as pd

from src.analyzers.economic_analysis import INTEGER_COLUMNS, METRICS_COLUMNS, EpisodeMetrics
from src.core.errors import MetricsFormatError

logger = logging.getLogger(__name__)

SUPPORTED_FORMATS = ('csv', 'json')


def run_suffix(directory: Union[str, Path], filenames: Sequence[str]) -> str:
    """Smallest suffix ('', '_1', '_2', ...) for which none of the files exists"""
    directory = Path(directory)
    k = 0
    while True:
        suffix = f"_{k}" if k else ""
        if not any((directory / with_suffix(name, suffix)).exists() for name in filenames):
            return suffix
        k += 1


def with_suffix(filename: str, suffix: str) -> str:
    path = Path(filename)
    return f"{path.stem}{suffix}{path.suffix}"


def artifact_paths(directory: Union[str, Path], filenames: Sequence[str]) -> Dict[str, Path]:
    """Create the directory and reserve a non-clashing path per artifact name"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    suffix = run_suffix(directory, filenames)
    return {name: directory / with_suffix(name, suffix) for name in filenames}


def _json_safe(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


def write_json(data: Any, path: Union[str, Path]) -> Path:
    """Deterministic JSON (sorted keys, non-finite numbers as null)"""
    path = Path(path)
    with open(path, 'w') as f:
        json.dump(_json_safe(data), f, indent=2, sort_keys=True, allow_nan=False)
        f.write("\n")
    return path


def metrics_to_frame(metrics: Sequence[EpisodeMetrics]) -> pd.DataFrame:
    return pd.DataFrame([m.to_row() for m in metrics], columns=METRICS_COLUMNS)


def write_metrics_csv(metrics: Union[Sequence[EpisodeMetrics], pd.DataFrame], path: Union[str, Path]) -> Path:
    df = metrics if isinstance(metrics, pd.DataFrame) else metrics_to_frame(metrics)
    df.to_csv(path, index=False, columns=METRICS_COLUMNS)
    return Path(path)


def write_metrics_json(df: pd.DataFrame, path: Union[str, Path]) -> Path:
    records = [{col: _native(row[col], col) for col in METRICS_COLUMNS} for _, row in df.iterrows()]
    path = Path(path)
    with open(path, 'w') as f:
        json.dump(records, f, indent=2)
        f.write("\n")
    return path


def _native(value: Any, column: str) -> Any:
    return int(value) if column in INTEGER_COLUMNS else float(value)


def _parse_value(raw: Any, column: str, row: int) -> Any:
    try:
        if column in INTEGER_COLUMNS:
            value = int(raw) if not isinstance(raw, str) else int(raw.strip())
        else:
            value = float(raw)
    except (TypeError, ValueError):
        raise MetricsFormatError(f"column '{column}' has non-numeric value {raw!r}", row=row)
    if isinstance(value, float) and not math.isfinite(value):
        raise MetricsFormatError(f"column '{column}' has non-finite value {raw!r}", row=row)
    return value


def _typed_frame(rows: List[Dict[str, Any]]) -> pd.DataFrame:
    """Validate raw rows (1-based data row numbers in errors) into a typed frame"""
    parsed = []
    for i, raw in enumerate(rows, start=1):
        if not isinstance(raw, dict):
            raise MetricsFormatError("expected an object per episode", row=i)
        missing = [c for c in METRICS_COLUMNS if c not in raw]
        if missing:
            raise MetricsFormatError(f"missing columns {', '.join(missing)}", row=i)
        parsed.append({c: _parse_value(raw[c], c, i) for c in METRICS_COLUMNS})
    df = pd.DataFrame(parsed, columns=METRICS_COLUMNS)
    for col in METRICS_COLUMNS:
        df[col] = df[col].astype('int64' if col in INTEGER_COLUMNS else 'float64')
    return df


def read_metrics_csv(path: Union[str, Path]) -> pd.DataFrame:
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise MetricsFormatError(f"{path}: file is empty, expected header {','.join(METRICS_COLUMNS)}")
    except pd.errors.ParserError as e:
        raise MetricsFormatError(f"{path}: {e}")
    if list(raw.columns) != METRICS_COLUMNS:
        raise MetricsFormatError(f"{path}: header {','.join(raw.columns)} != {','.join(METRICS_COLUMNS)}")
    return _typed_frame(raw.to_dict(orient='records'))


def read_metrics_json(path: Union[str, Path]) -> pd.DataFrame:
    try:
        with open(path, 'r') as f:
            rows = json.load(f)
    except json.JSONDecodeError as e:
        raise MetricsFormatError(f"{path}: invalid JSON: {e}")
    if not isinstance(rows, list):
        raise MetricsFormatError(f"{path}: expected a list of episode records")
    return _typed_frame(rows)


def read_metrics(path: Union[str, Path]) -> pd.DataFrame:
    path = Path(path)
    if path.suffix.lower() == '.json':
        return read_metrics_json(path)
    return read_metrics_csv(path)


def export_metrics(source: Union[str, Path], fmt: str, destination: Union[str, Path]) -> Path:
    """Convert a metrics file to `fmt` (csv or json) with the same field names"""
    if fmt not in SUPPORTED_FORMATS:
        raise ValueError(f"unsupported format '{fmt}'; supported formats: {', '.join(SUPPORTED_FORMATS)}")
    df = read_metrics(source)
    if fmt == 'csv':
        return write_metrics_csv(df, destination)
    return write_metrics_json(df, destination)
