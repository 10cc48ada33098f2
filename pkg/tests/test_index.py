from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pytest

from conftest import FIXTURES, brownian_spec, ladder_spec
from promocontest.config import load_instance
from promocontest.exceptions import ParameterDomainError, StaleCacheError
from promocontest.index import (
    AugmentedChain,
    FlowChain,
    IndexTable,
    build_index_table,
    chain_indices,
    gittins_index,
    load_index_table,
    lower_envelope,
    monotonicity_breaks,
    quit_boundary,
    retirement_value,
    retirement_values,
    save_index_table,
    strategic_index,
)
from promocontest.worker import perpetuity_values, promotion_thresholds


def _constant_chain(value: float) -> FlowChain:
    spec = brownian_spec()
    return FlowChain(
        kernel=np.asarray(spec.chain.kernel),
        flow=np.full(spec.n_states, value),
        beta=spec.beta,
        weight=spec.weight,
        discount=spec.discount,
    )


def test_constant_flow_index_is_lump_value():
    chain = _constant_chain(0.7)
    assert np.allclose(chain_indices(chain), 0.7 / 0.1)


def test_absorbing_states_index_their_flow():
    spec = brownian_spec()
    gittins = gittins_index(spec)
    assert gittins[0] == pytest.approx(0.0, abs=1e-12)
    assert gittins[-1] == pytest.approx(1.0 / 0.1)


def test_gittins_above_myopic_and_monotone():
    spec = brownian_spec(points=9, delta=0.05)
    gittins = gittins_index(spec)
    assert np.all(gittins >= spec.pi / spec.discount - 1e-10)
    assert np.all(np.diff(gittins) >= -1e-10)


def test_elimination_matches_bisection():
    spec = brownian_spec(1.5, points=7, delta=0.1)
    fast = gittins_index(spec, method="elimination")
    slow = gittins_index(spec, method="bisection")
    assert np.allclose(fast, slow, atol=1e-7)


def test_bisection_threads_do_not_change_result():
    spec = brownian_spec()
    assert np.array_equal(gittins_index(spec, method="bisection", threads=1), gittins_index(spec, method="bisection", threads=3))


def test_unknown_index_method():
    with pytest.raises(ParameterDomainError):
        gittins_index(brownian_spec(), method="guess")  # type: ignore[arg-type]


def test_retirement_policy_and_value_iteration_agree():
    chain = FlowChain.from_spec(brownian_spec(points=9, delta=0.05))
    for W in (0.0, 2.0, 5.0, 20.0):
        assert np.allclose(retirement_values(chain, W, method="policy"), retirement_values(chain, W, method="value"), atol=1e-8)


def test_index_is_indifference_payoff():
    spec = brownian_spec(points=9, delta=0.05)
    chain = FlowChain.from_spec(spec)
    gittins = gittins_index(spec)
    x = 4
    below, above = gittins[x] - 1e-3, gittins[x] + 1e-3
    assert retirement_value(chain, x, below) > below
    assert retirement_value(chain, x, above) == pytest.approx(above, abs=1e-10)


def test_retirement_rejects_negative_payoff():
    with pytest.raises(ParameterDomainError):
        retirement_value(_constant_chain(1.0), 0, -1.0)


def test_augmented_chain_structure():
    spec = brownian_spec(points=9, delta=0.05)
    aug = AugmentedChain.build(spec)
    thresholds = promotion_thresholds(spec)
    pbar = perpetuity_values(spec)
    assert np.allclose(aug.kernel.sum(axis=1), 1.0)
    for k, (x, m) in enumerate(aug.states):
        assert m <= x
        if aug.promoted[k]:
            assert x >= thresholds[m]
            assert aug.kernel[k, k] == 1.0
            assert aug.flow[k] == pytest.approx(pbar[x])
        else:
            assert aug.flow[k] == spec.pi[x]


def test_strategic_index_bounded_by_gittins():
    spec = brownian_spec(points=9, delta=0.05)
    gittins = gittins_index(spec)
    strategic = strategic_index(spec)
    for (x, _m), value in strategic.items():
        assert value <= gittins[x] + 1e-9


@pytest.mark.parametrize("name", ["tiny2x5.yaml", "bad_news_pair.yaml", "ladder_pair.yaml", "zero_cost.yaml"])
def test_fixture_indices_are_ordered(name: str):
    for spec in load_instance(FIXTURES / name).config.workers:
        gittins = gittins_index(spec)
        strategic = strategic_index(spec)
        for (x, _m), value in strategic.items():
            assert value <= gittins[x] + 1e-9
        assert np.all(np.diff(promotion_thresholds(spec)) >= 0)
        breaks = monotonicity_breaks(spec, build_index_table(spec))
        assert all(gap.frozen_below_flow for gap in breaks), breaks
        if not name.startswith("ladder"):
            assert breaks == []


def test_truncated_ladder_drops_only_at_promotion_states():
    spec = load_instance(FIXTURES / "ladder_pair.yaml").config.workers[0]
    table = build_index_table(spec)
    breaks = monotonicity_breaks(spec, table)
    assert breaks
    for gap in breaks:
        assert gap.x_next == table.thresholds[gap.m]
        assert table.strategic[(gap.x_next, gap.m)] == pytest.approx(table.perpetuity[gap.x_next] / spec.discount)
        assert table.strategic[(gap.x, gap.m)] == pytest.approx(spec.pi[gap.x] / spec.discount, rel=1e-9)


def test_strategic_equals_gittins_without_cost():
    spec = brownian_spec(points=9, delta=0.05, cost=0.0)
    gittins = gittins_index(spec)
    strategic = strategic_index(spec)
    for (x, _m), value in strategic.items():
        assert value == pytest.approx(gittins[x], abs=1e-10)


def test_strategic_index_in_promotion_region():
    spec = ladder_spec()
    table = build_index_table(spec)
    pbar = perpetuity_values(spec)
    thresholds = promotion_thresholds(spec)
    for (x, m), value in table.strategic.items():
        if x >= thresholds[m]:
            assert value == pytest.approx(pbar[x] / spec.discount)


def test_cache_hit_returns_identical_table(tmp_path: Path):
    spec = brownian_spec()
    first = build_index_table(spec, cache_dir=tmp_path)
    assert (tmp_path / f"{spec.spec_hash}.json").is_file()
    second = build_index_table(spec, cache_dir=tmp_path)
    assert second.to_dict() == first.to_dict()


def test_stale_cache_is_rejected(tmp_path: Path):
    spec = brownian_spec()
    other = brownian_spec(1.5)
    path = save_index_table(build_index_table(other), tmp_path / "table.json")
    with pytest.raises(StaleCacheError):
        load_index_table(path, spec)


def test_stale_cache_file_is_rebuilt(tmp_path: Path):
    spec = brownian_spec()
    other = brownian_spec(1.5)
    save_index_table(build_index_table(other), tmp_path / f"{spec.spec_hash}.json")
    table = build_index_table(spec, cache_dir=tmp_path)
    assert table.spec_hash == spec.spec_hash


def test_table_dict_round_trip_preserves_bits():
    table = build_index_table(brownian_spec())
    again = IndexTable.from_dict(table.to_dict())
    assert np.array_equal(again.gittins, table.gittins)
    assert again.strategic == dict(table.strategic)
    assert len(table.rows()) == len(table.strategic)


def test_quit_boundary():
    spec = brownian_spec()
    table = build_index_table(spec)
    assert quit_boundary(spec, 0.0, table=table) == 0
    assert quit_boundary(spec, 100.0, table=table) == spec.n_states - 1
    spec_free = brownian_spec(cost=0.0)
    assert quit_boundary(spec_free, 0.0) == 0


def test_lower_envelope():
    assert list(lower_envelope([5.0, 6.0, 3.0, 4.0, 1.0])) == [5.0, 5.0, 3.0, 3.0, 1.0]
    with pytest.raises(ParameterDomainError):
        lower_envelope([])


def test_lump_units():
    chain = _constant_chain(1.0)
    assert chain.lump(1.0) == pytest.approx(1.0 / (1.0 - math.exp(-0.02)))
