#!/usr/bin/env python3
"""
Run configuration validation
Checks a parsed YAML run template section by section and reports every
problem with its key path and source line.
"""

from typing import Any, Dict, List, Optional, Tuple

import yaml

# key path (tuple of keys / list indices) -> 1-based source line
LineMap = Dict[Tuple[Any, ...], int]

NUMBER = (int, float)

TOP_LEVEL_SECTIONS = {
    'metadata': dict,
    'run': dict,
    'environment': dict,
    'equipment': list,
    'agent': dict,
    'training': dict,
    'strategies': dict,
}
REQUIRED_SECTIONS = ('environment', 'equipment')

RUN_FIELDS = {'name': str, 'seed': int, 'max_workers': int, 'baseline_episodes': int}

ENVIRONMENT_FIELDS = {
    'h': int, 'r_normal': NUMBER, 'r_anomalous': NUMBER, 'cost_weight_lambda': NUMBER,
    'sim_discount': NUMBER, 'leveling_weight_alpha': NUMBER, 'variance_threshold': NUMBER,
    'safety_weight': NUMBER, 'action_weight': NUMBER, 'episode_length': int,
    'lifecycle_horizon': NUMBER, 'repair_success_prob': NUMBER,
}

EQUIPMENT_FIELDS = {
    'id': str, 'install_age_years': NUMBER, 'aging_coeff': NUMBER, 'repair_cost': NUMBER,
    'replace_cost': NUMBER, 'base_fail_prob': NUMBER, 'criticality': NUMBER,
}
EQUIPMENT_REQUIRED = ('id', 'install_age_years', 'aging_coeff', 'repair_cost', 'replace_cost', 'base_fail_prob')
MAX_UNITS = 8

AGENT_FIELDS = {
    'n_quantiles': int, 'gamma': NUMBER, 'learning_rate': NUMBER, 'batch_size': int,
    'buffer_capacity': int, 'warmup': int, 'target_sync_interval': int, 'kappa': NUMBER,
    'sigma_init': NUMBER, 'trunk_widths': list, 'head_widths': list, 'dropout': NUMBER,
    'double_dqn': bool, 'epsilon': NUMBER, 'per_alpha': NUMBER, 'per_beta_start': NUMBER,
    'per_beta_end': NUMBER, 'per_eps': NUMBER, 'reward_scale': NUMBER,
}

TRAINING_FIELDS = {'episode_budget': int, 'eval_tail': int, 'early_stop': (dict, bool, type(None)),
                   'log_every': int}
EARLY_STOP_FIELDS = {'window': int, 'min_improvement': NUMBER}

STRATEGY_FIELDS = {'risk_profile': str, 'cutoff': NUMBER, 'lambda_multiplier': NUMBER,
                   'safety_multiplier': NUMBER, 'episode_budget': int}
RISK_PROFILES = ('lower_tail', 'mean', 'upper_tail')


def build_line_map(text: str) -> LineMap:
    """Map each key path in a YAML document to the line it starts on"""
    lines: LineMap = {}
    root = yaml.compose(text)
    if root is None:
        return lines

    def walk(node, path):
        lines[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for key_node, value_node in node.value:
                child = path + (key_node.value,)
                walk(value_node, child)
                lines[child] = key_node.start_mark.line + 1
        elif isinstance(node, yaml.SequenceNode):
            for i, item in enumerate(node.value):
                walk(item, path + (i,))

    walk(root, ())
    return lines


def format_path(path: Tuple[Any, ...]) -> str:
    out = ""
    for key in path:
        out += f"[{key}]" if isinstance(key, int) else (f".{key}" if out else str(key))
    return out or "<root>"


class ConfigValidator:
    """Validates one parsed run template"""

    def __init__(self, config: Any, line_map: Optional[LineMap] = None, source: Optional[str] = None):
        self.config = config
        self.line_map = line_map or {}
        self.source = source
        self.validation_results = {
            "validation_status": "passed",
            "source": source,
            "checks": {},
        }

    def line_of(self, path: Tuple[Any, ...]) -> Optional[int]:
        while path:
            if path in self.line_map:
                return self.line_map[path]
            path = path[:-1]
        return self.line_map.get(())

    def _issue(self, issues: List[Dict[str, Any]], path: Tuple[Any, ...], message: str):
        issues.append({"path": format_path(path), "line": self.line_of(path), "message": message})

    def validate(self) -> Dict[str, Any]:
        """Run every section check; status 'failed' when any issue was found"""
        if not isinstance(self.config, dict):
            issues = []
            self._issue(issues, (), "run template must be a mapping of sections")
            self.validation_results["checks"]["structure"] = {"status": "failed", "issues": issues}
        else:
            self._check_sections()
            self._check_fields('run', RUN_FIELDS)
            self._check_fields('environment', ENVIRONMENT_FIELDS)
            self._check_equipment()
            self._check_fields('agent', AGENT_FIELDS)
            self._check_training()
            self._check_strategies()

        if any(check["status"] == "failed" for check in self.validation_results["checks"].values()):
            self.validation_results["validation_status"] = "failed"
        return self.validation_results

    def issues(self) -> List[Dict[str, Any]]:
        found = []
        for check in self.validation_results["checks"].values():
            found.extend(check["issues"])
        return found

    def _record(self, name: str, issues: List[Dict[str, Any]]):
        self.validation_results["checks"][name] = {
            "status": "failed" if issues else "passed",
            "issues": issues,
        }

    def _check_sections(self):
        issues = []
        for section in self.config:
            if section not in TOP_LEVEL_SECTIONS:
                self._issue(issues, (section,),
                            f"unknown section '{section}'; expected one of {', '.join(TOP_LEVEL_SECTIONS)}")
        for section in REQUIRED_SECTIONS:
            if self.config.get(section) is None:
                self._issue(issues, (section,) if section in self.config else (), f"missing required section '{section}'")
        for section, kind in TOP_LEVEL_SECTIONS.items():
            if section in self.config and self.config[section] is not None \
                    and not isinstance(self.config[section], kind):
                self._issue(issues, (section,), f"section '{section}' must be a {kind.__name__}")
        self._record("sections", issues)

    def _check_mapping(self, issues, data: Any, path: Tuple[Any, ...], schema: Dict[str, Any]):
        if not isinstance(data, dict):
            return
        for key, value in data.items():
            if key not in schema:
                self._issue(issues, path + (key,), f"unknown key '{key}'; expected one of {', '.join(schema)}")
                continue
            expected = schema[key]
            # bool is an int subclass; only accept it where bool is expected
            wrong_bool = isinstance(value, bool) and expected is not bool and not (
                isinstance(expected, tuple) and bool in expected)
            if wrong_bool or not isinstance(value, expected):
                names = expected.__name__ if isinstance(expected, type) else \
                    " or ".join(t.__name__ for t in expected)
                self._issue(issues, path + (key,), f"'{key}' must be {names}, got {value!r}")

    def _check_fields(self, section: str, schema: Dict[str, Any]):
        issues = []
        self._check_mapping(issues, self.config.get(section), (section,), schema)
        self._record(section, issues)

    def _check_equipment(self):
        issues = []
        units = self.config.get('equipment')
        if not isinstance(units, list):
            self._record("equipment", issues)
            return
        if not 1 <= len(units) <= MAX_UNITS:
            self._issue(issues, ('equipment',), f"need 1 to {MAX_UNITS} units, got {len(units)}")
        seen = set()
        for i, unit in enumerate(units):
            path = ('equipment', i)
            if not isinstance(unit, dict):
                self._issue(issues, path, "each unit must be a mapping")
                continue
            self._check_mapping(issues, unit, path, EQUIPMENT_FIELDS)
            for key in EQUIPMENT_REQUIRED:
                if key not in unit:
                    self._issue(issues, path, f"unit {i} is missing '{key}'")
            if unit.get('id') in seen:
                self._issue(issues, path + ('id',), f"duplicate unit id '{unit['id']}'")
            seen.add(unit.get('id'))

            numbers = {k: unit.get(k) for k in EQUIPMENT_FIELDS if isinstance(unit.get(k), NUMBER)}
            if 'base_fail_prob' in numbers and not 0 <= numbers['base_fail_prob'] <= 1:
                self._issue(issues, path + ('base_fail_prob',), "base_fail_prob must be in [0, 1]")
            if 'repair_cost' in numbers and 'replace_cost' in numbers \
                    and not 0 <= numbers['repair_cost'] < numbers['replace_cost']:
                self._issue(issues, path + ('repair_cost',), "need 0 <= repair_cost < replace_cost")
            for key in ('install_age_years', 'aging_coeff'):
                if key in numbers and numbers[key] < 0:
                    self._issue(issues, path + (key,), f"{key} must be >= 0")
        self._record("equipment", issues)

    def _check_training(self):
        issues = []
        training = self.config.get('training')
        self._check_mapping(issues, training, ('training',), TRAINING_FIELDS)
        if isinstance(training, dict) and isinstance(training.get('early_stop'), dict):
            self._check_mapping(issues, training['early_stop'], ('training', 'early_stop'), EARLY_STOP_FIELDS)
        self._record("training", issues)

    def _check_strategies(self):
        issues = []
        strategies = self.config.get('strategies')
        if isinstance(strategies, dict):
            for name, knobs in strategies.items():
                path = ('strategies', name)
                if knobs is None:
                    continue
                if not isinstance(knobs, dict):
                    self._issue(issues, path, f"strategy '{name}' must be a mapping")
                    continue
                self._check_mapping(issues, knobs, path, STRATEGY_FIELDS)
                profile = knobs.get('risk_profile')
                if profile is not None and profile not in RISK_PROFILES:
                    self._issue(issues, path + ('risk_profile',),
                                f"unknown risk profile '{profile}'; expected one of {', '.join(RISK_PROFILES)}")
                cutoff = knobs.get('cutoff')
                if isinstance(cutoff, NUMBER) and not 0 < cutoff <= 1:
                    self._issue(issues, path + ('cutoff',), "cutoff must be in (0, 1]")
        self._record("strategies", issues)
