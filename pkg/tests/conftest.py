from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from promocontest.config import Instance, load_instance
from promocontest.typeproc import build_brownian_belief, build_ladder_deadend
from promocontest.worker import WorkerSpec

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def brownian_spec(snr: float = 2.0, *, points: int = 5, delta: float = 0.2, cost: float = 0.05, prize: float = 1.0, initial: int = 1) -> WorkerSpec:
    chain = build_brownian_belief(0.5, snr, points, delta)
    return WorkerSpec(
        chain=chain,
        pi=chain.grid.copy(),
        cost=np.full(points, cost),
        prize=prize,
        discount=0.1,
        initial=initial,
    )


def ladder_spec(*, lam: float = 0.0, cost: float = 1.0, prize: float = 0.5, initial: int = 0) -> WorkerSpec:
    chain = build_ladder_deadend(1.0, lam, 0.75, 16, 0.05)
    return WorkerSpec(
        chain=chain,
        pi=chain.grid.copy(),
        cost=np.full(16, cost),
        prize=prize,
        discount=0.1,
        initial=initial,
    )


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def tiny() -> Instance:
    return load_instance(FIXTURES / "tiny2x5.yaml")


@pytest.fixture
def zero_cost() -> Instance:
    return load_instance(FIXTURES / "zero_cost.yaml")


@pytest.fixture(autouse=True)
def _isolated_env(monkeypatch: pytest.MonkeyPatch):
    """Настройки приложения из окружения не должны влиять на тесты."""
    for name in (
        "PROMOCONTEST_CONFIG",
        "PROMOCONTEST_OUTPUT",
        "PROMOCONTEST_CACHE_DIR",
        "PROMOCONTEST_THREADS",
        "PROMOCONTEST_REPLICATIONS",
        "PROMOCONTEST_SEED",
        "PROMOCONTEST_LOG_LEVEL",
    ):
        monkeypatch.delenv(name, raising=False)
    yield
