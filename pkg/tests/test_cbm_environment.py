#!/usr/bin/env python3
"""
Test the multi-equipment maintenance environment
"""

import copy
import itertools

import numpy as np
import pytest

from src.core.cbm_environment import (
    ANOMALOUS, DO_NOTHING, MONTH, NORMAL, REPAIR, REPLACE, CBMEnvironment, CostHistory, EnvConfig,
    EquipmentSpec, EquipmentState, RewardBreakdown, aging_class, aging_multiplier, criticality_class,
    decode_action, encode_action, encode_state, maintenance_factor, reward_cost, reward_safety,
    transition_prob,
)
from src.core.errors import ConfigurationError, DomainError, EpisodeError


def _state(age, condition=NORMAL):
    return EquipmentState(condition=condition, temp_norm=0.4, age_years=age)


# ----- Action indexing -----

def test_action_index_is_base_three_with_first_unit_most_significant():
    assert decode_action(0, 3) == [0, 0, 0]
    assert decode_action(5, 2) == [1, 2]
    assert decode_action(26, 3) == [2, 2, 2]
    assert encode_action([2, 0, 1]) == 19
    for index in range(27):
        assert encode_action(decode_action(index, 3)) == index


def test_action_index_out_of_range():
    with pytest.raises(DomainError):
        decode_action(9, 2)
    with pytest.raises(DomainError):
        decode_action(-1, 2)
    with pytest.raises(DomainError):
        encode_action([0, 3])


# ----- Degradation model -----

@pytest.mark.parametrize("age,multiplier,stage", [
    (0.0, 1.05, 'new'), (2.0, 1.05, 'new'), (2.0001, 1.00, 'mature'), (10.0, 1.00, 'mature'),
    (15.0, 0.95, 'aging'), (20.0, 0.95, 'aging'), (20.5, 0.85, 'legacy'), (40.0, 0.85, 'legacy'),
])
def test_aging_bands(age, multiplier, stage):
    assert aging_multiplier(age) == multiplier
    assert aging_class(age) == stage


def test_negative_age_is_a_domain_error():
    with pytest.raises(DomainError):
        aging_multiplier(-0.1)
    with pytest.raises(DomainError):
        aging_class(-1.0)


def test_criticality_classes():
    assert criticality_class(0.9) == 'critical'
    assert criticality_class(0.8) == 'critical'
    assert criticality_class(0.5) == 'important'
    assert criticality_class(0.2) == 'auxiliary'


def test_transition_prob_for_normal_units(testbed_specs):
    cp1, cdp0, cp2 = testbed_specs
    assert transition_prob(cp1, _state(19.7), DO_NOTHING) == pytest.approx(0.06 * (1 + 0.018 * 19.7) / 0.95)
    assert transition_prob(cdp0, _state(3.0), DO_NOTHING) == pytest.approx(0.04 * (1 + 0.005 * 3.0) / 1.00)
    assert transition_prob(cp2, _state(0.5), DO_NOTHING) == pytest.approx(0.03 * (1 + 0.003 * 0.5) / 1.05)
    # repairing a healthy unit does not change its degradation
    assert transition_prob(cp1, _state(19.7), REPAIR) == transition_prob(cp1, _state(19.7), DO_NOTHING)
    assert transition_prob(cp1, _state(19.7), REPLACE) == 0.0


def test_transition_prob_for_anomalous_units(testbed_specs):
    spec = testbed_specs[0]
    assert transition_prob(spec, _state(19.7, ANOMALOUS), DO_NOTHING) == 1.0
    assert transition_prob(spec, _state(19.7, ANOMALOUS), REPAIR) == pytest.approx(0.1)
    assert transition_prob(spec, _state(19.7, ANOMALOUS), REPAIR, repair_success_prob=0.75) == pytest.approx(0.25)
    assert transition_prob(spec, _state(19.7, ANOMALOUS), REPLACE) == 0.0


def test_transition_prob_is_clamped():
    spec = EquipmentSpec("X", 30.0, 0.5, 1.0, 2.0, 0.9)
    assert transition_prob(spec, _state(30.0), DO_NOTHING) == 1.0
    with pytest.raises(DomainError):
        transition_prob(spec, _state(1.0), 4)


def test_transition_prob_is_bounded_and_monotone_in_age():
    """Under do-nothing, aging never lowers the anomaly probability"""
    specs = [
        EquipmentSpec("A", 0.0, 0.0, 1.0, 2.0, 0.0),
        EquipmentSpec("B", 0.0, 0.018, 4.0, 12.0, 0.06),
        EquipmentSpec("C", 0.0, 0.2, 1.0, 2.0, 0.3),
        EquipmentSpec("D", 0.0, 1.0, 1.0, 2.0, 1.0),
    ]
    ages = np.arange(0.0, 40.0, 1.0 / 12.0)
    for spec in specs:
        probs = [transition_prob(spec, _state(age), DO_NOTHING) for age in ages]
        assert all(0.0 <= p <= 1.0 for p in probs)
        assert all(later >= earlier for earlier, later in zip(probs, probs[1:]))
        for age in (0.0, 5.0, 25.0):
            for condition in (NORMAL, ANOMALOUS):
                for code in (DO_NOTHING, REPAIR, REPLACE):
                    assert 0.0 <= transition_prob(spec, _state(age, condition), code) <= 1.0


@pytest.mark.slow
def test_transition_frequencies_match_probabilities(testbed_specs, testbed_config):
    """Monte-Carlo anomaly frequencies are within 3 standard errors of the model probabilities"""
    env = CBMEnvironment(testbed_config, testbed_specs)
    env.reset()
    rng = np.random.default_rng(77)
    draws = 100_000
    for code in (DO_NOTHING, REPAIR, REPLACE):
        codes = [code] * env.n
        counts = np.zeros(env.n)
        for _ in range(draws):
            after, probs = env.sample_conditions(codes, rng)
            counts += after
        for freq, p in zip(counts / draws, probs):
            if p == 0.0:
                assert freq == 0.0
                continue
            se = np.sqrt(p * (1 - p) / draws)
            assert abs(freq - p) <= 3 * se


# ----- Reward components -----

def test_cost_history_is_zero_padded_and_uses_population_variance():
    hist = CostHistory(4)
    assert list(hist.values()) == [0.0, 0.0, 0.0, 0.0]
    hist.push(4.0)
    hist.push(8.0)
    assert list(hist.values()) == [0.0, 0.0, 4.0, 8.0]
    assert hist.variance() == pytest.approx(np.var([0.0, 0.0, 4.0, 8.0]))
    with pytest.raises(DomainError):
        hist.push(-1.0)
    assert CostHistory(0).variance() == 0.0


def test_simultaneous_maintenance_discount(testbed_specs):
    cfg = EnvConfig(n=3)
    assert maintenance_factor([REPAIR, DO_NOTHING, DO_NOTHING], cfg) == 1.0
    assert maintenance_factor([REPAIR, REPLACE, DO_NOTHING], cfg) == pytest.approx(0.9)
    assert reward_cost([DO_NOTHING] * 3, testbed_specs, cfg) == 0.0
    assert reward_cost([REPAIR, REPLACE, DO_NOTHING], testbed_specs, cfg) == pytest.approx(-0.1 * 14.0 * 0.9)
    assert reward_cost([REPLACE, DO_NOTHING, DO_NOTHING], testbed_specs, cfg) == pytest.approx(-1.2)


def test_reward_safety_fraction_normal():
    cfg = EnvConfig(n=3)
    assert reward_safety([NORMAL, NORMAL, ANOMALOUS], cfg) == pytest.approx(10.0 * 2 / 3)


def test_reward_breakdown_total():
    breakdown = RewardBreakdown(risk=60.0, cost=-1.2, leveling=-3.0, safety=10.0, action=15.0)
    assert breakdown.total == pytest.approx(80.8)
    assert breakdown.as_dict()['total'] == breakdown.total


def _oracle(cfg, specs, before, codes, after, window):
    risk = 0.0
    for c in after:
        risk += cfg.r_anomalous if c == ANOMALOUS else cfg.r_normal
    gross = 0.0
    for spec, code in zip(specs, codes):
        gross += {DO_NOTHING: 0.0, REPAIR: spec.repair_cost, REPLACE: spec.replace_cost}[code]
    active = sum(1 for code in codes if code != DO_NOTHING)
    factor = 1.0 - cfg.sim_discount if active >= 2 else 1.0
    cost = 0.0 if gross == 0.0 else -cfg.cost_weight_lambda * gross * factor
    new_window = np.array(window[1:] + [gross * factor])
    excess = float(np.var(new_window)) - cfg.variance_threshold
    leveling = -cfg.leveling_weight_alpha * excess if excess > 0 else 0.0
    safety = cfg.safety_weight * (sum(1 for c in after if c == NORMAL) / len(after))
    action = 0.0
    for c, code in zip(before, codes):
        if (c == ANOMALOUS and code != DO_NOTHING) or (c == NORMAL and code == DO_NOTHING):
            action += cfg.action_weight
    return risk, cost, leveling, safety, action


def test_reward_matches_brute_force_for_every_joint_action(testbed_specs, testbed_config):
    """All 27 joint actions on a fixed state with a mixed condition vector and a busy spend history"""
    env = CBMEnvironment(testbed_config, testbed_specs)
    env.reset()
    env.units[0].condition = ANOMALOUS
    env.units[2].condition = ANOMALOUS
    for spend in [0.0, 12.0, 0.0, 3.5, 0.0, 0.0, 21.6, 0.0, 4.0, 0.0, 0.0, 9.0]:
        env.history.push(spend)
    window = list(env.history.values())
    before = env.conditions()

    for index, codes in enumerate(itertools.product(range(3), repeat=3)):
        trial = copy.deepcopy(env)
        _, reward, _, _, info = trial.step(index)
        breakdown = info['reward']
        assert reward == breakdown.total
        assert info['transitions'][0]['action'] == ['do_nothing', 'repair', 'replace'][codes[0]]
        after = [t['after'] for t in info['transitions']]
        expected = _oracle(testbed_config, testbed_specs, before, list(codes), after, window)
        assert (breakdown.risk, breakdown.cost, breakdown.leveling, breakdown.safety, breakdown.action) == expected


# ----- Environment mechanics -----

def test_reset_state_layout(testbed_specs, testbed_config):
    env = CBMEnvironment(testbed_config, testbed_specs)
    state, info = env.reset()
    assert info == {'step': 0}
    assert state.shape == (3 * 3 + 12,)
    assert env.observation_space.contains(state)
    assert env.action_space.n == 27
    assert env.conditions() == [NORMAL, NORMAL, NORMAL]
    assert state[2] == pytest.approx(19.7 / 25.0)
    assert np.all(state[9:] == 0.0)
    assert all(0.0 <= t <= 1.0 for t in state[1:9:3])


def test_state_length_is_3n_plus_h():
    for n in range(1, 9):
        specs = [EquipmentSpec(f"U-{i}", float(i), 0.01, 1.0, 3.0, 0.05) for i in range(n)]
        for h in range(0, 25):
            env = CBMEnvironment(EnvConfig(n=n, h=h), specs)
            state, _ = env.reset()
            assert state.shape == (3 * n + h,) == env.observation_space.shape
            assert env.action_space.n == 3 ** n
            next_state, _, _, _, _ = env.step(env.n_actions - 1)
            assert next_state.shape == (3 * n + h,)


def test_step_outside_episode_raises(toy_specs, toy_config):
    env = CBMEnvironment(toy_config, toy_specs)
    with pytest.raises(EpisodeError):
        env.step(0)
    env.reset()
    done = False
    steps = 0
    while not done:
        _, _, done, truncated, info = env.step(0)
        assert not truncated
        steps += 1
    assert steps == toy_config.episode_length
    assert info['step'] == toy_config.episode_length
    with pytest.raises(EpisodeError):
        env.step(0)


def test_aging_and_replacement_at_month_end(testbed_specs, testbed_config):
    env = CBMEnvironment(testbed_config, testbed_specs)
    env.reset()
    _, _, _, _, info = env.step([REPLACE, REPAIR, DO_NOTHING])
    assert env.units[0].age_years == 0.0
    assert env.units[1].age_years == pytest.approx(3.0 + MONTH)
    assert env.units[2].age_years == pytest.approx(0.5 + MONTH)
    assert info['gross_cost'] == pytest.approx(15.5)
    assert info['spend'] == pytest.approx(15.5 * 0.9)
    assert env.history.values()[-1] == pytest.approx(15.5 * 0.9)


def test_state_carries_scaled_spend_history(testbed_specs, testbed_config):
    env = CBMEnvironment(testbed_config, testbed_specs)
    env.reset()
    state, _, _, _, info = env.step([REPLACE, DO_NOTHING, DO_NOTHING])
    assert state[-1] == pytest.approx(info['spend'] / 12.0)
    np.testing.assert_allclose(state, encode_state(env.units, env.history, env.cost_scale))


def test_invalid_joint_action(testbed_specs, testbed_config):
    env = CBMEnvironment(testbed_config, testbed_specs)
    env.reset()
    with pytest.raises(DomainError):
        env.step([0, 1])
    with pytest.raises(DomainError):
        env.step([0, 1, 5])
    with pytest.raises(DomainError):
        env.step(27)


def test_same_seed_same_trajectory(toy_specs, toy_config):
    envs = [CBMEnvironment(toy_config, toy_specs) for _ in range(2)]
    for env in envs:
        env.reset()
    for t in range(toy_config.episode_length):
        a = envs[0].step(t % 9)
        b = envs[1].step(t % 9)
        np.testing.assert_array_equal(a[0], b[0])
        assert a[1] == b[1]
        assert a[4]['reward'] == b[4]['reward']


def test_reset_seed_restarts_stream(toy_specs, toy_config):
    env = CBMEnvironment(toy_config, toy_specs)
    first, _ = env.reset(seed=5)
    rewards = [env.step(0)[1] for _ in range(5)]
    assert np.array_equal(env.reset(seed=5)[0], first)
    assert [env.step(0)[1] for _ in range(5)] == rewards


def test_config_validation():
    with pytest.raises(ConfigurationError):
        EquipmentSpec("X", 1.0, 0.01, 5.0, 5.0, 0.1)
    with pytest.raises(ConfigurationError):
        EquipmentSpec("X", -1.0, 0.01, 1.0, 5.0, 0.1)
    with pytest.raises(ConfigurationError):
        EquipmentSpec("X", 1.0, 0.01, 1.0, 5.0, 1.5)
    with pytest.raises(ConfigurationError):
        EnvConfig(n=0)
    with pytest.raises(ConfigurationError):
        EnvConfig(n=2, r_normal=-1.0)
    with pytest.raises(ConfigurationError):
        EnvConfig(n=2, sim_discount=1.0)


def test_spec_count_must_match_config(testbed_specs):
    env = CBMEnvironment(EnvConfig(n=2), testbed_specs)
    with pytest.raises(ConfigurationError):
        env.reset()
