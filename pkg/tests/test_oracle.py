from __future__ import annotations

import numpy as np
import pytest

from conftest import brownian_spec
from promocontest.config import Instance
from promocontest.engine import IndexContestPolicy, build_tables, evaluate_policy
from promocontest.exceptions import InstanceTooLargeError, ParameterDomainError
from promocontest.index import FlowChain, chain_indices, gittins_index, retirement_value
from promocontest.oracle import (
    FAMILY_NAMES,
    ContestRule,
    bandit_value,
    brute_force_chain_index,
    brute_force_gittins,
    brute_force_retirement,
    brute_force_single_arm,
    enumerate_feasible_contests,
    has_corridor_structure,
    instance_hash,
    policy_family,
)
from promocontest.typeproc import build_bad_news_belief, build_brownian_belief
from promocontest.worker import WorkerSpec, single_arm_contract


def _bad_news_spec() -> WorkerSpec:
    chain = build_bad_news_belief(0.4, 1.0, 6, 0.1)
    return WorkerSpec(chain=chain, pi=chain.grid.copy(), cost=np.full(6, 0.05), prize=1.0, discount=0.1, initial=1)


@pytest.mark.parametrize("make", [brownian_spec, _bad_news_spec])
@pytest.mark.parametrize("method", ["solve", "iterate"])
def test_gittins_matches_brute_force(make, method):
    spec = make()
    gittins = gittins_index(spec)
    for x in range(spec.n_states):
        assert gittins[x] == pytest.approx(brute_force_gittins(spec, x, method=method), abs=1e-8)


@pytest.mark.parametrize("seed", range(8))
def test_chain_index_matches_brute_force_on_random_chains(seed: int):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 7))
    kernel = rng.dirichlet(np.ones(n), size=n)
    chain = FlowChain(kernel=kernel, flow=rng.uniform(0.0, 1.0, n), beta=0.9, weight=1.0, discount=0.1)
    indices = chain_indices(chain)
    for x in range(n):
        assert indices[x] == pytest.approx(brute_force_chain_index(chain, x), abs=1e-6)


def test_brute_force_refuses_large_grids():
    spec = brownian_spec(points=9, delta=0.05)
    with pytest.raises(InstanceTooLargeError):
        brute_force_gittins(spec, 0, max_states=8)


def test_unknown_oracle_method():
    with pytest.raises(ParameterDomainError):
        brute_force_gittins(brownian_spec(), 1, method="guess")


@pytest.mark.parametrize("W", [0.0, 1.5, 4.0, 12.0])
def test_retirement_matches_brute_force(W: float):
    spec = brownian_spec()
    chain = FlowChain.from_spec(spec)
    for x in range(spec.n_states):
        assert retirement_value(chain, x, W) == pytest.approx(brute_force_retirement(chain, x, W), abs=1e-9)


def test_bandit_value_with_one_arm_is_retirement_value():
    spec = brownian_spec()
    chain = FlowChain.from_spec(spec)
    assert bandit_value([spec], 2.0) == pytest.approx(retirement_value(chain, spec.initial, 2.0), abs=1e-10)


def test_zero_cost_contest_is_classic_bandit(zero_cost: Instance):
    cfg = zero_cost.config
    tables = build_tables(cfg)
    for table in tables:
        assert np.all(table.thresholds == len(table.gittins))
    value = evaluate_policy(cfg, IndexContestPolicy(tables, cfg.outside_option), tables=tables).principal_value
    assert value == pytest.approx(bandit_value(cfg.workers, cfg.outside_option), abs=1e-8)


def test_single_arm_oracle_bounds_contract(tiny: Instance):
    spec = tiny.config.workers[0]
    W = tiny.config.outside_option
    oracle = brute_force_single_arm(spec, W)
    contract = single_arm_contract(spec, W)
    assert oracle.n_feasible >= 1
    assert oracle.n_candidates >= oracle.n_feasible
    assert contract.principal_value == pytest.approx(oracle.value, abs=1e-8)
    assert oracle.corridor_structure
    assert oracle.value >= W
    data = oracle.to_dict()
    assert data["value"] == oracle.value
    assert len(data["policy"]) == len(oracle.policy)


def _random_small_spec(seed: int) -> WorkerSpec:
    rng = np.random.default_rng(seed)
    points = int(rng.integers(5, 7))
    if seed % 2 == 0:
        chain = build_brownian_belief(0.5, float(rng.uniform(1.5, 2.0)), points, 0.15)
        initial = 1 if points == 6 else int(rng.integers(1, 3))
    else:
        chain = build_bad_news_belief(float(rng.uniform(0.3, 0.6)), float(rng.uniform(0.8, 1.5)), points, 0.1)
        initial = 1
    power = float(rng.choice([1.0, 2.0]))
    return WorkerSpec(
        chain=chain,
        pi=chain.grid**power,
        cost=np.full(points, float(rng.uniform(0.03, 0.08))),
        prize=float(rng.uniform(0.8, 1.2)),
        discount=0.1,
        initial=initial,
    )


@pytest.mark.parametrize("W", [0.0, 0.5, 2.0])
@pytest.mark.parametrize("seed", range(10))
def test_single_arm_contract_is_optimal_on_random_specs(seed: int, W: float):
    spec = _random_small_spec(seed)
    oracle = brute_force_single_arm(spec, W)
    contract = single_arm_contract(spec, W)
    assert contract.principal_value == pytest.approx(oracle.value, abs=1e-8)
    assert oracle.corridor_structure
    assert contract.min_worker_value >= -1e-8


def test_single_arm_oracle_prefers_outside_option_when_large():
    spec = brownian_spec()
    oracle = brute_force_single_arm(spec, 50.0)
    assert oracle.value == pytest.approx(50.0)
    assert oracle.policy[(spec.initial, spec.initial)] == "quit"


def test_single_arm_oracle_limits():
    spec = brownian_spec(points=9, delta=0.05)
    with pytest.raises(InstanceTooLargeError):
        brute_force_single_arm(spec, 0.5)
    with pytest.raises(InstanceTooLargeError):
        brute_force_single_arm(brownian_spec(), 0.5, max_policies=3)


def test_corridor_structure_detection():
    good = {(1, 1): "continue", (2, 1): "continue", (3, 1): "promote", (0, 0): "quit"}
    assert has_corridor_structure(good)
    quit_off_diagonal = {(1, 1): "continue", (2, 1): "quit"}
    assert not has_corridor_structure(quit_off_diagonal)
    gap = {(1, 1): "continue", (2, 1): "promote", (3, 1): "continue"}
    assert not has_corridor_structure(gap)
    falling = {(2, 1): "continue", (3, 1): "promote", (3, 2): "continue", (4, 2): "promote", (2, 2): "continue"}
    assert has_corridor_structure(falling)
    rising = {(4, 1): "promote", (3, 1): "continue", (3, 2): "promote", (2, 2): "continue"}
    assert not has_corridor_structure(rising)


def test_family_sizes_for_two_workers(tiny: Instance):
    tables = build_tables(tiny.config)
    sizes = {name: len(list(policy_family(tiny.config, tables, name))) for name in FAMILY_NAMES}
    assert sizes == {"index": 1, "thresholds": 32, "priority": 64, "wrong-order": 32, "switch": 512, "all": 641}
    names = [p.name for p in policy_family(tiny.config, tables, "all")]
    assert len(set(names)) == len(names)


def test_unknown_family(tiny: Instance):
    with pytest.raises(ParameterDomainError):
        policy_family(tiny.config, build_tables(tiny.config), "random")


def test_rule_with_zero_shift_matches_index_contest(tiny: Instance):
    cfg = tiny.config
    tables = build_tables(cfg)
    rule = ContestRule(tables, cfg.outside_option)
    index = IndexContestPolicy(tables, cfg.outside_option)
    assert evaluate_policy(cfg, rule, tables=tables).principal_value == pytest.approx(
        evaluate_policy(cfg, index, tables=tables).principal_value, abs=1e-12
    )


def test_switch_rule_period(tiny: Instance):
    rule = ContestRule(build_tables(tiny.config), 0.5, selector="switch", k=3)
    assert rule.period == 6
    assert rule.name.endswith("k=3")


def test_feasible_family_bounded_by_envelope(tiny: Instance):
    cfg = tiny.config
    tables = build_tables(cfg)
    envelope = evaluate_policy(cfg, IndexContestPolicy(tables, cfg.outside_option), tables=tables).envelope_value
    enumeration = enumerate_feasible_contests(cfg, "thresholds", tables=tables)
    assert enumeration.n_candidates == 32
    assert enumeration.n_feasible >= 1
    assert enumeration.best_value <= envelope + 1e-9
    summary = enumeration.to_dict()
    assert summary["instance_hash"] == instance_hash(cfg)
    assert summary["family"] == "thresholds"
    if enumeration.n_feasible < enumeration.n_candidates:
        assert summary["witness"] is not None


def test_enumeration_is_thread_independent(tiny: Instance):
    cfg = tiny.config
    tables = build_tables(cfg)
    one = enumerate_feasible_contests(cfg, "wrong-order", tables=tables, threads=1)
    two = enumerate_feasible_contests(cfg, "wrong-order", tables=tables, threads=2)
    assert one.rows() == two.rows()
