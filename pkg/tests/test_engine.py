from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest

from conftest import brownian_spec, ladder_spec
from promocontest.config import Instance
from promocontest.engine import (
    Action,
    AlwaysDelegate,
    ContestConfig,
    IndexContestPolicy,
    Observation,
    OutsidePolicy,
    build_tables,
    check_ir,
    evaluate_policy,
    index_at,
    principal_value_envelope,
    realized_index_paths,
    run_index_contest,
    run_policy,
    simulate_contests,
    time_change_construction,
    trial_spells,
)
from promocontest.exceptions import InstanceTooLargeError, ParameterDomainError, PolicyError
from promocontest.index import lower_envelope


def test_config_rejects_mixed_discounts():
    a = brownian_spec()
    b = replace(brownian_spec(), discount=0.2)
    with pytest.raises(ParameterDomainError):
        ContestConfig(workers=(a, b))


def test_config_rejects_mixed_steps():
    with pytest.raises(ParameterDomainError):
        ContestConfig(workers=(brownian_spec(delta=0.2), brownian_spec(delta=0.1)))


@pytest.mark.parametrize("kwargs", [{"outside_option": -1.0}, {"priority": (0, 0)}, {"horizon_cap": -5.0}])
def test_config_domain(kwargs):
    with pytest.raises(ParameterDomainError):
        ContestConfig(workers=(brownian_spec(), brownian_spec()), **kwargs)


def test_default_horizon_leaves_negligible_weight():
    cfg = ContestConfig(workers=(brownian_spec(),))
    assert math.exp(-cfg.discount * cfg.horizon_cap) < 1e-9
    assert cfg.priority == (0,)


def test_index_at_falls_back_to_frozen_perpetuity(tiny: Instance):
    table = build_tables(tiny.config)[0]
    assert index_at(table, 1, 1, 0.1) == table.strategic_at(1, 1)
    # (1, 0) недостижимо: m = 0 только после поглощения в нуле
    missing = (1, 0)
    assert missing not in table.strategic
    assert index_at(table, *missing, 0.1) == pytest.approx(table.perpetuity[missing[0]] / 0.1)


def test_policy_priority_breaks_ties(tiny: Instance):
    tables = build_tables(tiny.config)
    policy = IndexContestPolicy(tables, 0.5, priority=(1, 0))
    obs = Observation(xs=(1, 1), ms=(1, 1), envs=(3.0, 3.0), step=0)
    assert policy.decide(obs) == Action.delegate(1)
    assert IndexContestPolicy(tables, 0.5).decide(obs) == Action.delegate(0)


def test_policy_takes_outside_option_on_ties(tiny: Instance):
    tables = build_tables(tiny.config)
    policy = IndexContestPolicy(tables, 0.5)
    obs = Observation(xs=(1, 1), ms=(1, 1), envs=(0.5, 0.2), step=0)
    assert policy.decide(obs) == Action.outside()


def test_policy_promotes_worker_in_region(tiny: Instance):
    tables = build_tables(tiny.config)
    thresholds = tables[0].thresholds
    m = 1
    x = int(thresholds[m])
    if x >= 5:
        pytest.skip("worker is never promoted from this minimum")
    obs = Observation(xs=(x, 1), ms=(m, 1), envs=(0.1, 9.0), step=0)
    assert IndexContestPolicy(tables, 0.5).decide(obs) == Action.promote(0)


def test_bad_policy_output_is_rejected(tiny: Instance):
    class Broken:
        name = "broken"
        period = 1

        def decide(self, obs):
            return "delegate"

    with pytest.raises(PolicyError):
        evaluate_policy(tiny.config, Broken())


def test_policy_addressing_missing_worker(tiny: Instance):
    with pytest.raises(PolicyError):
        evaluate_policy(tiny.config, AlwaysDelegate(5))


def test_outside_policy_value(tiny: Instance):
    evaluation = evaluate_policy(tiny.config, OutsidePolicy())
    assert evaluation.principal_value == pytest.approx(0.5)
    assert evaluation.envelope_value == pytest.approx(0.5)
    assert evaluation.worker_value(0) == 0.0


def test_index_contest_value_matches_envelope(tiny: Instance):
    tables = build_tables(tiny.config)
    policy = IndexContestPolicy(tables, tiny.config.outside_option)
    evaluation = evaluate_policy(tiny.config, policy, tables=tables)
    assert evaluation.principal_value == pytest.approx(evaluation.envelope_value, abs=1e-8)
    assert evaluation.principal_value >= tiny.config.outside_option - 1e-12
    assert principal_value_envelope(tiny.config, tables=tables) == pytest.approx(evaluation.envelope_value)


def test_index_contest_respects_participation(tiny: Instance):
    tables = build_tables(tiny.config)
    report = check_ir(tiny.config, IndexContestPolicy(tables, 0.5), tables=tables)
    assert report.passed
    assert report.to_dict()["passed"] is True


def test_too_large_product_chain(tiny: Instance):
    with pytest.raises(InstanceTooLargeError) as excinfo:
        evaluate_policy(tiny.config, IndexContestPolicy(build_tables(tiny.config), 0.5), max_states=3)
    assert excinfo.value.limit == 3


def test_monte_carlo_agrees_with_exact(tiny: Instance):
    tables = build_tables(tiny.config)
    exact = evaluate_policy(tiny.config, IndexContestPolicy(tables, 0.5), tables=tables)
    summary = simulate_contests(tiny.config, tables=tables, replications=3000, seed=4)
    mean = summary.principal.mean()
    se = summary.principal.std(ddof=1) / math.sqrt(summary.replications)
    assert abs(mean - exact.principal_value) <= 4.0 * se + 1e-12
    env_mean = principal_value_envelope(tiny.config, tables=tables, mode="monte_carlo", replications=3000, seed=4)
    assert env_mean == pytest.approx(summary.envelope.mean())


def test_simulation_is_independent_of_thread_count(tiny: Instance):
    tables = build_tables(tiny.config)
    one = simulate_contests(tiny.config, tables=tables, replications=600, seed=9, threads=1)
    many = simulate_contests(tiny.config, tables=tables, replications=600, seed=9, threads=4)
    assert one.to_dict() == many.to_dict()
    assert np.array_equal(one.principal, many.principal)


def test_simulation_requires_replications(tiny: Instance):
    with pytest.raises(ParameterDomainError):
        simulate_contests(tiny.config, replications=0)


def test_trace_accounting(tiny: Instance):
    tables = build_tables(tiny.config)
    trace = run_index_contest(tiny.config, np.random.default_rng(2), tables=tables, record_values=True)
    assert trace.outcome.kind in ("promoted", "outside_option")
    assert trace.steps == len(trace.events)
    delegations = trace.delegation_order()
    assert sum(trace.effort_clocks) == pytest.approx(len(delegations) * tiny.config.step)
    for event in trace.events:
        assert event.worker_values is not None
    for path in realized_index_paths(trace, 2):
        if path:
            assert np.array_equal(lower_envelope(path), np.asarray(path))


def test_horizon_cap_marks_trace():
    spec = ladder_spec()
    cfg = ContestConfig(workers=(spec,), horizon_cap=1.0)
    trace = run_policy(cfg, AlwaysDelegate(0), np.random.default_rng(0))
    assert trace.outcome.kind == "capped"
    assert trace.steps == cfg.horizon_steps


def test_time_change_on_hand_example():
    change = time_change_construction([[5, 2, 2, 1], [4, 4, 3, 0]])
    assert change.order == [0, 1, 1, 1, 0, 0, 0, 1]
    assert change.clocks[0][-1] == 4 and change.clocks[1][-1] == 4
    for t in range(len(change.order)):
        assert change.clocks[0][t] + change.clocks[1][t] == t


def test_time_change_priority_and_outside_option():
    change = time_change_construction([[3, 1], [3, 2]], priority=(1, 0), outside_option=1.5)
    assert change.order == [1, 0, 1]


def test_time_change_reproduces_index_contest(tiny: Instance):
    tables = build_tables(tiny.config)
    for seed in range(5):
        trace = run_index_contest(tiny.config, np.random.default_rng(seed), tables=tables)
        paths = realized_index_paths(trace, 2)
        change = time_change_construction(paths, priority=tiny.config.priority)
        assert change.order == trace.delegation_order()


def test_trial_spells_cover_trace(tiny: Instance):
    tables = build_tables(tiny.config)
    trace = run_index_contest(tiny.config, np.random.default_rng(7), tables=tables)
    spells = trial_spells(trace, tables, 0.5)
    delegated = sum(s.end_step - s.start_step for s in spells)
    assert delegated == len(trace.delegation_order())
    for spell in spells:
        assert spell.promised_threshold == int(tables[spell.worker].thresholds[spell.running_min])
        assert spell.termination_level >= 0.5
    if trace.outcome.kind == "promoted":
        assert spells[-1].result == "promoted"


def test_envelope_drops_only_with_running_minimum(tiny: Instance):
    tables = build_tables(tiny.config)
    for seed in range(300):
        trace = run_index_contest(tiny.config, np.random.default_rng(seed), tables=tables)
        for event, after in zip(trace.events, trace.events[1:]):
            if event.action != "delegate":
                continue
            i = event.worker
            if after.envelopes[i] < event.envelopes[i] - 1e-9:
                assert event.m_after < event.m_before
            thresholds = tables[i].thresholds
            assert thresholds[event.m_after] <= thresholds[event.m_before]
        if trace.outcome.kind == "promoted":
            last = trace.events[-1]
            assert last.x_before == tables[last.worker].thresholds[last.m_before]
