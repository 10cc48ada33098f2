from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from promocontest.exceptions import DiscretizationError, ParameterDomainError, StepSizeError
from promocontest.typeproc import (
    TypeChain,
    build_bad_news_belief,
    build_brownian_belief,
    build_ladder_deadend,
    load_chain,
    save_chain,
    step,
    step_with_uniform,
    validate,
)


def test_bad_news_hazard_and_bayes_update():
    # p = 0.2, λΔ = 0.02: новость с вероятностью 0.8·0.02 = 0.016
    chain = build_bad_news_belief(0.2, 0.2, 6, 0.1)
    assert chain.grid[0] == 0.0
    assert chain.grid[1] == pytest.approx(0.2)
    assert chain.kernel[1, 0] == pytest.approx(0.016)
    assert chain.kernel[1, 2] == pytest.approx(0.984)
    assert chain.grid[2] == pytest.approx(0.2 / 0.984)
    assert chain.is_absorbing(0)
    assert chain.is_absorbing(chain.top)
    assert chain.jump_sign == "down_only"
    assert validate(chain) == []


def test_bad_news_rejects_large_step():
    with pytest.raises(StepSizeError):
        build_bad_news_belief(0.5, 5.0, 6, 0.5)


def test_brownian_is_martingale_and_valid():
    chain = build_brownian_belief(0.5, 2.0, 9, 0.01)
    assert np.allclose(chain.kernel.sum(axis=1), 1.0)
    # среднее следующего убеждения равно текущему
    assert np.allclose(chain.kernel @ chain.grid, chain.grid)
    assert chain.is_absorbing(0) and chain.is_absorbing(chain.top)
    assert validate(chain) == []


def test_brownian_coarse_grid_raises_with_state():
    with pytest.raises(DiscretizationError) as excinfo:
        build_brownian_belief(0.5, 10.0, 5, 1.0)
    assert excinfo.value.state is not None


@pytest.mark.parametrize("p0", [0.0, 1.0, -0.3])
def test_brownian_p0_domain(p0: float):
    with pytest.raises(ParameterDomainError):
        build_brownian_belief(p0, 1.0, 5, 0.1)


def test_ladder_moves_one_cell_and_dead_ends_to_zero():
    chain = build_ladder_deadend(1.0, 1.0, 0.75, 16, 0.05)
    assert chain.grid[1] - chain.grid[0] == pytest.approx(0.05)
    assert chain.kernel[3, 4] == pytest.approx(0.95)
    assert chain.kernel[3, 0] == pytest.approx(0.05)
    assert chain.kernel[chain.top, chain.top] == pytest.approx(0.95)
    assert not chain.is_absorbing(0)
    assert chain.boundary == ("reflecting", "reflecting")
    assert validate(chain) == []


def test_ladder_rejects_step_faster_than_a_cell():
    with pytest.raises(StepSizeError):
        build_ladder_deadend(2.0, 1.0, 0.75, 16, 0.05)


def test_validate_reports_row_sum_and_reachability():
    grid = [0.0, 0.5, 1.0]
    kernel = [[1.0, 0.0, 0.0], [0.1, 0.8, 0.0], [0.0, 0.0, 1.0]]
    chain = TypeChain(grid=grid, kernel=kernel, step=0.1)
    rules = {v.rule for v in validate(chain)}
    assert "row_sum" in rules
    assert "upward_reachability" in rules
    row = [v for v in validate(chain) if v.rule == "row_sum"][0]
    assert row.states == (1,)


def test_validate_flags_skip_and_leaking_boundary():
    grid = [0.0, 0.5, 1.0]
    kernel = [[0.5, 0.0, 0.5], [0.2, 0.6, 0.2], [0.0, 0.0, 1.0]]
    chain = TypeChain(grid=grid, kernel=kernel, step=0.1)
    rules = {v.rule for v in validate(chain)}
    assert "jump_sign" in rules
    assert "boundary" in rules


def test_validate_flags_monotonicity():
    grid = [0.0, 0.5, 1.0]
    # из 1 вниз вероятнее, чем из 0
    kernel = [[0.5, 0.5, 0.0], [0.9, 0.0, 0.1], [0.0, 0.0, 1.0]]
    chain = TypeChain(grid=grid, kernel=kernel, step=0.1, jump_sign="down_only", boundary=("reflecting", "absorbing"))
    assert any(v.rule == "monotonicity" for v in validate(chain))


def test_kernel_shape_mismatch():
    with pytest.raises(ParameterDomainError):
        TypeChain(grid=[0.0, 1.0], kernel=[[1.0]], step=0.1)


def test_chain_arrays_are_read_only():
    chain = build_brownian_belief(0.5, 1.0, 5, 0.1)
    with pytest.raises(ValueError):
        chain.kernel[0, 0] = 0.5


def test_step_with_uniform_is_monotone_coupling():
    chain = build_brownian_belief(0.5, 1.0, 7, 0.1)
    for u in np.linspace(0.0, 0.999, 50):
        nxt = [step_with_uniform(chain, x, float(u)) for x in range(chain.n_states)]
        assert nxt == sorted(nxt)


def test_step_matches_kernel_frequencies():
    chain = build_brownian_belief(0.5, 2.0, 5, 0.2)
    rng = np.random.default_rng(1)
    draws = np.array([step(chain, 2, rng) for _ in range(20_000)])
    freq = np.bincount(draws, minlength=chain.n_states) / draws.size
    assert np.allclose(freq, chain.kernel[2], atol=0.015)


def test_step_never_lands_outside_row_support():
    kernel = [[1.0, 0.0, 0.0], [0.6, 0.4 - 1e-13, 0.0], [0.0, 0.0, 1.0]]
    chain = TypeChain(grid=[0.0, 0.5, 1.0], kernel=kernel, step=0.1)
    assert chain.cdf[1, -1] < 1.0
    assert step_with_uniform(chain, 1, 1.0 - 1e-15) == 1
    assert list(chain.last_support) == [0, 1, 2]


def test_step_rejects_state_outside_grid():
    chain = build_brownian_belief(0.5, 1.0, 5, 0.1)
    with pytest.raises(IndexError):
        step_with_uniform(chain, 5, 0.3)


def test_save_and_load_chain(tmp_path: Path):
    chain = build_ladder_deadend(1.0, 0.5, 1.0, 6, 0.1)
    path = save_chain(chain, tmp_path / "chain.json")
    again = load_chain(path)
    assert np.array_equal(again.kernel, chain.kernel)
    assert again.boundary == chain.boundary
    assert again.jump_sign == chain.jump_sign
