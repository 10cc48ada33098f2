"""Ценности работника: продолжение усилий, пороги повышения, перпетуитет, контракт одного работника."""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Optional

import numpy as np
from scipy import linalg

from .exceptions import ParameterDomainError, SolverError
from .logging import get_logger
from .typeproc import TypeChain
from .utils import fingerprint

logger = get_logger("worker")

PARTICIPATION_TOL = 1e-9


@dataclass(frozen=True)
class WorkerSpec:
    """Примитивы одного работника: цепь, выигрыш π, издержки c, приз g, ставка r.

    `initial` — стартовое состояние на сетке.
    """

    chain: TypeChain
    pi: np.ndarray
    cost: np.ndarray
    prize: float
    discount: float
    initial: int = 0
    name: str = ""
    spec_hash: str = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        n = self.chain.n_states
        pi = np.array(self.pi, dtype=float).reshape(-1)
        cost = np.array(self.cost, dtype=float).reshape(-1)
        if pi.size != n or cost.size != n:
            raise ParameterDomainError(f"pi and cost must have {n} entries (got {pi.size} and {cost.size})")
        if np.any(pi < 0) or np.any(cost < 0):
            raise ParameterDomainError("pi and cost must be nonnegative")
        if np.any(np.diff(pi) < -1e-12):
            raise ParameterDomainError("pi must be nondecreasing across the grid")
        if np.any(np.diff(cost) > 1e-12):
            raise ParameterDomainError("cost must be nonincreasing across the grid")
        if not (self.prize > 0 and math.isfinite(self.prize)):
            raise ParameterDomainError(f"prize must be positive, got {self.prize}")
        if not (self.discount > 0 and math.isfinite(self.discount)):
            raise ParameterDomainError(f"discount must be positive, got {self.discount}")
        if not 0 <= int(self.initial) < n:
            raise ParameterDomainError(f"initial state {self.initial} outside 0..{n - 1}")
        pi.setflags(write=False)
        cost.setflags(write=False)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "cost", cost)
        object.__setattr__(self, "prize", float(self.prize))
        object.__setattr__(self, "discount", float(self.discount))
        object.__setattr__(self, "initial", int(self.initial))
        object.__setattr__(self, "spec_hash", fingerprint(self.to_dict(include_name=False)))

    @property
    def beta(self) -> float:
        """Дисконт за шаг e^{−rΔ}."""
        return math.exp(-self.discount * self.chain.step)

    @property
    def weight(self) -> float:
        """Вес потока за шаг: (1 − e^{−rΔ}) / r."""
        return -math.expm1(-self.discount * self.chain.step) / self.discount

    @property
    def n_states(self) -> int:
        return self.chain.n_states

    def with_prize(self, prize: float) -> "WorkerSpec":
        return replace(self, prize=prize)

    def with_pi(self, pi: np.ndarray) -> "WorkerSpec":
        return replace(self, pi=np.asarray(pi, dtype=float))

    def with_wage(self, wage: np.ndarray | float) -> "WorkerSpec":
        """Поток зарплаты w(x), пока работник делегирован: π − w для принципала, c − w для работника.

        Отрицательные остатки обрезаются нулём.
        """
        w = np.broadcast_to(np.asarray(wage, dtype=float), self.pi.shape)
        return replace(self, pi=np.maximum(self.pi - w, 0.0), cost=np.maximum(self.cost - w, 0.0))

    def to_dict(self, *, include_name: bool = True) -> dict[str, Any]:
        data: dict[str, Any] = {
            "chain": self.chain.to_dict(),
            "pi": [float(v) for v in self.pi],
            "cost": [float(v) for v in self.cost],
            "prize": self.prize,
            "discount": self.discount,
            "initial": self.initial,
        }
        if include_name:
            data["name"] = self.name
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "WorkerSpec":
        try:
            return cls(
                chain=TypeChain.from_dict(data["chain"]),
                pi=np.asarray(data["pi"], dtype=float),
                cost=np.asarray(data["cost"], dtype=float),
                prize=float(data["prize"]),
                discount=float(data["discount"]),
                initial=int(data.get("initial", 0)),
                name=str(data.get("name", "")),
            )
        except KeyError as exc:
            raise ParameterDomainError(f"worker document misses field {exc.args[0]!r}", original=exc) from exc


def _solve(matrix: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        return linalg.solve(matrix, rhs)
    except (linalg.LinAlgError, ValueError) as exc:
        raise SolverError(f"linear system could not be solved: {exc}", original=exc) from exc


def corridor_values(spec: WorkerSpec, x_lo: int, x_hi: int) -> np.ndarray:
    """Ценность работника во всех состояниях для коридора (x_lo, x_hi).

    Выход при y ≥ x_hi платит g, при y ≤ x_lo — 0; внутри поток −c.
    Допустимы x_lo = −1 (нет нижнего выхода) и x_hi = K+1 (нет верхнего).
    """
    n = spec.n_states
    if not -1 <= x_lo < x_hi <= n:
        raise ParameterDomainError(f"invalid corridor ({x_lo}, {x_hi}) for {n} states")
    values = np.zeros(n)
    values[max(x_hi, 0):] = spec.prize
    interior = np.arange(x_lo + 1, min(x_hi, n))
    if interior.size == 0:
        return values
    beta = spec.beta
    kernel = spec.chain.kernel
    sub = kernel[np.ix_(interior, interior)]
    rhs = -spec.weight * spec.cost[interior]
    if x_hi < n:
        rhs = rhs + beta * kernel[interior, x_hi:].sum(axis=1) * spec.prize
    values[interior] = _solve(np.eye(interior.size) - beta * sub, rhs)
    return values


def continuation_value(spec: WorkerSpec, x: int, x_lo: int, x_hi: int) -> float:
    """U(x; x_lo, x_hi): дисконтированная ценность усилий до первого выхода из коридора."""
    if not x_lo <= x <= x_hi:
        raise ParameterDomainError(f"state {x} outside corridor [{x_lo}, {x_hi}]")
    if x >= x_hi:
        return spec.prize
    if x <= x_lo:
        return 0.0
    return float(corridor_values(spec, x_lo, x_hi)[x])


_cache_lock = threading.Lock()
_threshold_cache: dict[str, np.ndarray] = {}
_perpetuity_cache: dict[str, np.ndarray] = {}


def promotion_thresholds(spec: WorkerSpec) -> np.ndarray:
    """P̄(m) для всех m: наибольший x̄ ∈ {m+1, …, K+1} с U(m; m−1, x̄) ≥ −tol.

    K+1 означает «никогда не повышать». Если ни один x̄ не подходит — m
    (повышение при касании). Монотонность по m обеспечивается сканированием
    от ответа предыдущего m.

    Участие проверяется в самом m с нижним выходом m−1: на сетке «узел сразу над
    минимумом» для пары (m, m) — это m, а выход наступает при падении ниже m.
    """
    key = spec.spec_hash
    with _cache_lock:
        cached = _threshold_cache.get(key)
    if cached is not None:
        return cached

    n = spec.n_states
    out = np.empty(n, dtype=int)
    prev = 0
    for m in range(n):
        floor = max(prev, m + 1)
        found: Optional[int] = None
        for x_bar in range(n, floor - 1, -1):
            if corridor_values(spec, m - 1, x_bar)[m] >= -PARTICIPATION_TOL:
                found = x_bar
                break
        ans = found if found is not None else m
        if ans < prev:
            logger.warning("threshold at m=%d raised from %d to %d to keep monotonicity", m, ans, prev)
            ans = prev
        out[m] = ans
        prev = ans
    out.setflags(write=False)
    with _cache_lock:
        _threshold_cache[key] = out
    return out


def promotion_threshold(spec: WorkerSpec, m: int) -> int:
    if not 0 <= m < spec.n_states:
        raise ParameterDomainError(f"running minimum {m} outside 0..{spec.n_states - 1}")
    return int(promotion_thresholds(spec)[m])


def perpetuity_values(spec: WorkerSpec) -> np.ndarray:
    """π̄(x) = r·E[Σ β^t a π(x_t) | x] для всех x (одна линейная система на спецификацию)."""
    key = spec.spec_hash
    with _cache_lock:
        cached = _perpetuity_cache.get(key)
    if cached is not None:
        return cached
    beta = spec.beta
    n = spec.n_states
    values = (1.0 - beta) * _solve(np.eye(n) - beta * spec.chain.kernel, spec.pi)
    values.setflags(write=False)
    with _cache_lock:
        _perpetuity_cache[key] = values
    return values


def perpetuity_value(spec: WorkerSpec, x: int) -> float:
    return float(perpetuity_values(spec)[x])


def clear_caches() -> None:
    with _cache_lock:
        _threshold_cache.clear()
        _perpetuity_cache.clear()


@dataclass(frozen=True)
class SingleArmContract:
    """Оптимальный контракт одного работника: выход p̲(W) и пороги P̄(m).

    quit_state = −1 означает «никогда не выходить».
    """

    quit_state: int
    thresholds: np.ndarray
    principal_value: float
    worker_values: Mapping[tuple[int, int], float]
    outside_option: float
    degenerate: bool = False

    def threshold_fn(self, m: int) -> int:
        return int(self.thresholds[m])

    def worker_value_fn(self, x: int, m: int) -> float:
        return float(self.worker_values[(x, m)])

    @property
    def min_worker_value(self) -> float:
        if not self.worker_values:
            return 0.0
        return float(min(self.worker_values.values()))


def single_arm_contract(spec: WorkerSpec, W: float, *, table: Any = None) -> SingleArmContract:
    """Собрать контракт: p̲(W) из индексов, P̄ из порогов, ценности — оценкой политики.

    Принципал выходит, когда нижняя огибающая стратегического индекса ≤ W,
    повышает при достижении P̄(m) и иначе делегирует работнику.
    """
    # модули index и engine сами импортируют worker
    from .engine import ContestConfig, IndexContestPolicy, evaluate_policy
    from .index import build_index_table, quit_boundary

    if W < 0:
        raise ParameterDomainError(f"outside option must be nonnegative, got {W}")
    table = table if table is not None else build_index_table(spec)
    config = ContestConfig(workers=(spec,), outside_option=W)
    evaluation = evaluate_policy(config, IndexContestPolicy((table,), W), tables=(table,))

    values: dict[tuple[int, int], float] = {}
    for state, idx in evaluation.index.items():
        x, m, _env = state.workers[0]
        v = float(evaluation.worker_values[0][idx])
        values[(x, m)] = min(v, values.get((x, m), v))

    x0 = spec.initial
    thresholds = promotion_thresholds(spec)
    degenerate = bool(thresholds[x0] <= x0)
    if degenerate:
        logger.info("immediate promotion dominates experimentation at the initial state %d", x0)
    return SingleArmContract(
        quit_state=quit_boundary(spec, W, table=table),
        thresholds=thresholds,
        principal_value=evaluation.principal_value,
        worker_values=values,
        outside_option=float(W),
        degenerate=degenerate,
    )


__all__ = [
    "WorkerSpec",
    "SingleArmContract",
    "corridor_values",
    "continuation_value",
    "promotion_thresholds",
    "promotion_threshold",
    "perpetuity_values",
    "perpetuity_value",
    "single_arm_contract",
    "clear_caches",
]
