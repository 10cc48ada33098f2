"""Переборные решатели для малых экземпляров: индексы, отставка, контракт одного работника,
семейства допустимых конкурсов.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Literal, Optional, Sequence

import numpy as np
from scipy import linalg

from .engine import (
    DEFAULT_MAX_PRODUCT_STATES,
    Action,
    ContestConfig,
    IndexContestPolicy,
    Observation,
    Policy,
    ProductState,
    build_tables,
    evaluate_policy,
)
from .exceptions import InstanceTooLargeError, NumericalError, ParameterDomainError
from .index import FlowChain, IndexTable
from .logging import get_logger
from .utils import fingerprint
from .worker import WorkerSpec, perpetuity_values

logger = get_logger("oracle")

DEFAULT_MAX_GRID = 12
DEFAULT_MAX_SINGLE_ARM_GRID = 7
DEFAULT_MAX_POLICIES = 500_000
FEASIBILITY_TOL = 1e-9
_ITERATE_TOL = 1e-13
_ITERATE_CAP = 1_000_000


def _check_size(n: int, limit: int, what: str) -> None:
    if n > limit:
        raise InstanceTooLargeError(f"{what} has {n} states, oracle limit is {limit}", size=n, limit=limit)


def _sums_on_set(chain: FlowChain, cont: np.ndarray, method: str) -> tuple[np.ndarray, np.ndarray]:
    """E[Σ_{t<τ} β^t a f] и E[Σ_{t<τ} β^t] до выхода из множества продолжения."""
    idx = np.flatnonzero(cont)
    q = chain.beta * chain.kernel[np.ix_(idx, idx)]
    reward = chain.weight * chain.flow[idx]
    ones = np.ones(idx.size)
    if method == "solve":
        mat = np.eye(idx.size) - q
        return linalg.solve(mat, reward), linalg.solve(mat, ones)
    if method != "iterate":
        raise ParameterDomainError(f"unknown oracle method {method!r}")
    num = np.zeros(idx.size)
    den = np.zeros(idx.size)
    for _ in range(_ITERATE_CAP):
        new_num = reward + q @ num
        new_den = ones + q @ den
        residual = max(float(np.max(np.abs(new_num - num))), float(np.max(np.abs(new_den - den))))
        num, den = new_num, new_den
        if residual < _ITERATE_TOL:
            return num, den
    raise NumericalError("oracle iteration did not converge", residual=residual)


def brute_force_chain_index(
    chain: FlowChain, state: int, *, method: str = "solve", max_states: int = DEFAULT_MAX_GRID
) -> float:
    """max по множествам продолжения C ∋ state отношения E[Σβ^t a f] / E[1 − β^τ]."""
    n = chain.n_states
    _check_size(n, max_states, "chain")
    others = [s for s in range(n) if s != state]
    best = -math.inf
    for size in range(len(others) + 1):
        for subset in itertools.combinations(others, size):
            cont = np.zeros(n, dtype=bool)
            cont[state] = True
            cont[list(subset)] = True
            num, den = _sums_on_set(chain, cont, method)
            pos = int(np.searchsorted(np.flatnonzero(cont), state))
            ratio = num[pos] / ((1.0 - chain.beta) * den[pos])
            best = max(best, float(ratio))
    return best


def brute_force_gittins(
    spec: WorkerSpec, state: int, *, method: str = "solve", max_states: int = DEFAULT_MAX_GRID
) -> float:
    return brute_force_chain_index(FlowChain.from_spec(spec), state, method=method, max_states=max_states)


def brute_force_retirement(
    chain: FlowChain, state: int, W: float, *, max_states: int = DEFAULT_MAX_GRID
) -> float:
    """Ценность отставки перебором всех 2^n множеств остановки."""
    if W < 0:
        raise ParameterDomainError(f"retirement payoff must be nonnegative, got {W}")
    n = chain.n_states
    _check_size(n, max_states, "chain")
    best = float(W)
    for mask in range(1 << n):
        cont = np.array([(mask >> s) & 1 == 1 for s in range(n)], dtype=bool)
        if not cont[state]:
            continue
        idx = np.flatnonzero(cont)
        stop = np.flatnonzero(~cont)
        rhs = chain.weight * chain.flow[idx]
        if stop.size:
            rhs = rhs + chain.beta * chain.kernel[np.ix_(idx, stop)].sum(axis=1) * W
        values = linalg.solve(np.eye(idx.size) - chain.beta * chain.kernel[np.ix_(idx, idx)], rhs)
        best = max(best, float(values[int(np.searchsorted(idx, state))]))
    return best


def bandit_value(specs: Sequence[WorkerSpec], W: float, *, max_states: int = 20_000) -> float:
    """Оптимальная ценность классического бандита с отставкой W (без повышений).

    Итерация Говарда на произведении базовых цепей; действие — отставка или шаг руки i.
    """
    if W < 0:
        raise ParameterDomainError(f"retirement payoff must be nonnegative, got {W}")
    sizes = [s.n_states for s in specs]
    total = int(np.prod(sizes))
    _check_size(total, max_states, "product chain")
    beta, a = specs[0].beta, specs[0].weight
    states = list(itertools.product(*(range(n) for n in sizes)))
    pos = {s: k for k, s in enumerate(states)}

    def step_matrix(i: int) -> np.ndarray:
        mat = np.zeros((total, total))
        kernel = specs[i].chain.kernel
        for k, s in enumerate(states):
            for y in np.flatnonzero(kernel[s[i]] > 0.0):
                nxt = s[:i] + (int(y),) + s[i + 1:]
                mat[k, pos[nxt]] += kernel[s[i], y]
        return mat

    moves = [step_matrix(i) for i in range(len(specs))]
    flows = [np.array([a * specs[i].pi[s[i]] for s in states]) for i in range(len(specs))]
    policy = np.full(total, -1, dtype=int)
    for _ in range(4 * total + 10):
        mat = np.eye(total)
        rhs = np.full(total, float(W))
        for k in range(total):
            i = policy[k]
            if i >= 0:
                mat[k] -= beta * moves[i][k]
                rhs[k] = flows[i][k]
        values = linalg.solve(mat, rhs)
        options = np.vstack([np.full(total, float(W))] + [flows[i] + beta * moves[i] @ values for i in range(len(specs))])
        current = options[policy + 1, np.arange(total)]
        best = np.argmax(options, axis=0) - 1
        improve = options[best + 1, np.arange(total)] > current + 1e-12
        if not improve.any():
            return float(values[pos[tuple(s.initial for s in specs)]])
        policy = np.where(improve, best, policy)
    raise NumericalError("bandit policy iteration did not stabilise", residual=float("nan"))


# ---------------------------------------------------------------------------
# Один работник: перебор политик на расширенной цепи
# ---------------------------------------------------------------------------

ArmAction = Literal["continue", "promote", "quit"]
_ARM_ACTIONS: tuple[ArmAction, ...] = ("continue", "promote", "quit")


@dataclass
class SingleArmOracleResult:
    """Лучшая детерминированная политика (x, m) → действие с ограничением участия."""

    value: float
    policy: dict[tuple[int, int], ArmAction]
    n_candidates: int
    n_feasible: int
    corridor_structure: bool
    structured_value: float
    witness: Optional[tuple[tuple[int, int], float]] = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "value": self.value,
            "policy": [[x, m, act] for (x, m), act in sorted(self.policy.items())],
            "n_candidates": self.n_candidates,
            "n_feasible": self.n_feasible,
            "corridor_structure": self.corridor_structure,
            "structured_value": self.structured_value,
            "witness": None if self.witness is None else [list(self.witness[0]), self.witness[1]],
        }


def _augmented_successors(spec: WorkerSpec, x: int, m: int) -> list[tuple[tuple[int, int], float]]:
    row = spec.chain.kernel[x]
    return [((int(y), min(m, int(y))), float(row[y])) for y in np.flatnonzero(row > 0.0)]


def _evaluate_arm_policy(
    spec: WorkerSpec,
    W: float,
    policy: dict[tuple[int, int], ArmAction],
    start: tuple[int, int],
    pbar: np.ndarray,
) -> tuple[float, np.ndarray, list[tuple[int, int]]]:
    beta, a, r, g = spec.beta, spec.weight, spec.discount, spec.prize
    act0 = policy[start]
    if act0 == "quit":
        return float(W), np.zeros(0), []
    if act0 == "promote":
        return float(pbar[start[0]]) / r, np.zeros(0), []
    cont = [s for s, act in policy.items() if act == "continue"]
    pos = {s: k for k, s in enumerate(cont)}
    size = len(cont)
    mat = np.eye(size)
    rhs = np.zeros((size, 2))
    for k, (x, m) in enumerate(cont):
        rhs[k, 0] = a * spec.pi[x]
        rhs[k, 1] = -a * spec.cost[x]
        for nxt, prob in _augmented_successors(spec, x, m):
            act = policy[nxt]
            if act == "continue":
                mat[k, pos[nxt]] -= beta * prob
            elif act == "promote":
                rhs[k, 0] += beta * prob * float(pbar[nxt[0]]) / r
                rhs[k, 1] += beta * prob * g
            else:
                rhs[k, 0] += beta * prob * W
    sol = linalg.solve(mat, rhs)
    return float(sol[pos[start], 0]), sol[:, 1], cont


def has_corridor_structure(policy: dict[tuple[int, int], ArmAction]) -> bool:
    """Выход только на диагонали x = m, повышение — верхнее множество по x, порог не убывает по m."""
    by_m: dict[int, list[tuple[int, ArmAction]]] = {}
    for (x, m), act in policy.items():
        by_m.setdefault(m, []).append((x, act))
    floors: list[tuple[int, int]] = []
    for m, items in sorted(by_m.items()):
        items.sort()
        seen_promote = False
        for x, act in items:
            if act == "quit" and x != m:
                return False
            if act == "promote":
                seen_promote = True
            elif seen_promote:
                return False
        promote_xs = [x for x, act in items if act == "promote" and x > m]
        if promote_xs:
            floors.append((m, min(promote_xs)))
    return all(floors[k][1] <= floors[k + 1][1] for k in range(len(floors) - 1))


def brute_force_single_arm(
    spec: WorkerSpec,
    W: float,
    *,
    max_states: int = DEFAULT_MAX_SINGLE_ARM_GRID,
    max_policies: int = DEFAULT_MAX_POLICIES,
) -> SingleArmOracleResult:
    """Перебор детерминированных политик, измеримых по (x, m), на достижимой из (x0, x0) части.

    Состояния за выходом или повышением не раскрываются, поэтому каждая политика
    перечисляется один раз. Участие: ценность работника ≥ 0 во всех достижимых
    состояниях продолжения.
    """
    if W < 0:
        raise ParameterDomainError(f"outside option must be nonnegative, got {W}")
    _check_size(spec.n_states, max_states, "grid")
    pbar = perpetuity_values(spec)
    start = (spec.initial, spec.initial)

    best_value, best_policy = -math.inf, {}
    best_struct = -math.inf
    counts = {"all": 0, "feasible": 0}
    witness: list[Optional[tuple[tuple[int, int], float]]] = [None]
    decided: dict[tuple[int, int], ArmAction] = {}

    def score() -> None:
        nonlocal best_value, best_policy, best_struct
        counts["all"] += 1
        if counts["all"] > max_policies:
            raise InstanceTooLargeError(
                f"more than {max_policies} candidate policies", size=counts["all"], limit=max_policies
            )
        value, worker, cont = _evaluate_arm_policy(spec, W, decided, start, pbar)
        if worker.size and float(np.min(worker)) < -FEASIBILITY_TOL:
            if witness[0] is None:
                k = int(np.argmin(worker))
                witness[0] = (cont[k], float(worker[k]))
            return
        counts["feasible"] += 1
        if value > best_value + 1e-12:
            best_value, best_policy = value, dict(decided)
        if value > best_struct and has_corridor_structure(decided):
            best_struct = value

    def expand(pending: list[tuple[int, int]]) -> None:
        if not pending:
            score()
            return
        state, rest = pending[0], pending[1:]
        for act in _ARM_ACTIONS:
            decided[state] = act
            nxt = list(rest)
            if act == "continue":
                for succ, _p in _augmented_successors(spec, *state):
                    if succ not in decided and succ not in nxt:
                        nxt.append(succ)
            expand(nxt)
        del decided[state]

    expand([start])
    logger.info(
        "single-arm oracle: %d candidates, %d feasible, best %.10g", counts["all"], counts["feasible"], best_value
    )
    return SingleArmOracleResult(
        value=float(best_value),
        policy=best_policy,
        n_candidates=counts["all"],
        n_feasible=counts["feasible"],
        corridor_structure=bool(best_struct >= best_value - FEASIBILITY_TOL),
        structured_value=float(best_struct),
        witness=witness[0],
    )


# ---------------------------------------------------------------------------
# Семейства конкурсов
# ---------------------------------------------------------------------------

Selector = Literal["index", "wrong", "priority", "switch"]
SHIFTS = (0, -1, -2, -3)
SWITCH_PERIODS = tuple(range(1, 9))


class ContestRule:
    """Параметрическое правило конкурса для перебора.

    selector: index — argmax Γ̲; wrong — argmin Γ̲; priority — первый в порядке с Γ̲ > W;
    switch — по очереди каждые k шагов. shifts сдвигают пороги повышения вниз.
    quit: standard — выход при max Γ̲ ≤ W; never — внешний вариант не берётся.
    """

    def __init__(
        self,
        tables: Sequence[IndexTable],
        outside_option: float,
        *,
        selector: Selector = "index",
        order: Optional[Sequence[int]] = None,
        shifts: Optional[Sequence[int]] = None,
        quit: Literal["standard", "never"] = "standard",
        k: int = 1,
    ) -> None:
        self.tables = tuple(tables)
        n = len(self.tables)
        self.outside_option = float(outside_option)
        self.selector = selector
        self.order = tuple(order) if order is not None else tuple(range(n))
        self.shifts = tuple(shifts) if shifts is not None else (0,) * n
        self.quit = quit
        self.k = int(k)
        self.period = self.k * n if selector == "switch" else 1
        parts = [selector, "order=" + "".join(map(str, self.order)), "shift=" + ",".join(map(str, self.shifts)), quit]
        if selector == "switch":
            parts.append(f"k={self.k}")
        self.name = "/".join(parts)

    def _threshold(self, i: int, m: int) -> int:
        return max(0, int(self.tables[i].thresholds[m]) + self.shifts[i])

    def decide(self, obs: Observation) -> Action:
        n = len(obs.xs)
        for i in self.order:
            if obs.xs[i] > obs.ms[i] and obs.xs[i] >= self._threshold(i, obs.ms[i]):
                return Action.promote(i)
        W = self.outside_option
        if self.quit == "standard" and max(obs.envs) <= W:
            return Action.outside()
        if self.selector == "index":
            target = max(obs.envs)
            chosen = next(i for i in self.order if obs.envs[i] == target)
        elif self.selector == "wrong":
            target = min(obs.envs)
            chosen = next(i for i in self.order if obs.envs[i] == target)
        elif self.selector == "priority":
            eligible = [i for i in self.order if obs.envs[i] > W] if self.quit == "standard" else list(self.order)
            chosen = eligible[0]
        else:
            chosen = self.order[(obs.step // self.k) % n]
        if obs.xs[chosen] >= self._threshold(chosen, obs.ms[chosen]):
            return Action.promote(chosen)
        return Action.delegate(chosen)


@dataclass
class PolicyFamily:
    """Конечное семейство кандидатов с детерминированным порядком перечисления."""

    name: str
    description: str
    enumerator: Callable[[], Iterator[Policy]]

    def __iter__(self) -> Iterator[Policy]:
        return self.enumerator()


FAMILY_NAMES = ("index", "thresholds", "priority", "wrong-order", "switch", "all")


def policy_family(config: ContestConfig, tables: Sequence[IndexTable], name: str) -> PolicyFamily:
    tables = tuple(tables)
    n = config.n_workers
    W = config.outside_option
    shift_grid = list(itertools.product(SHIFTS, repeat=n))
    orders = list(itertools.permutations(range(n)))
    quits = ("standard", "never")

    def index_only() -> Iterator[Policy]:
        yield IndexContestPolicy(tables, W, config.priority)

    def thresholds() -> Iterator[Policy]:
        for shifts, quit in itertools.product(shift_grid, quits):
            yield ContestRule(tables, W, selector="index", order=config.priority, shifts=shifts, quit=quit)

    def priority() -> Iterator[Policy]:
        for order, shifts, quit in itertools.product(orders, shift_grid, quits):
            yield ContestRule(tables, W, selector="priority", order=order, shifts=shifts, quit=quit)

    def wrong() -> Iterator[Policy]:
        for shifts, quit in itertools.product(shift_grid, quits):
            yield ContestRule(tables, W, selector="wrong", order=config.priority, shifts=shifts, quit=quit)

    def switch() -> Iterator[Policy]:
        for k, order, shifts, quit in itertools.product(SWITCH_PERIODS, orders, shift_grid, quits):
            yield ContestRule(tables, W, selector="switch", order=order, shifts=shifts, quit=quit, k=k)

    def everything() -> Iterator[Policy]:
        for part in (index_only, thresholds, priority, wrong, switch):
            yield from part()

    families = {
        "index": (index_only, "the index contest"),
        "thresholds": (thresholds, "index delegation with lowered promotion thresholds"),
        "priority": (priority, "fixed priority orders with lowered thresholds"),
        "wrong-order": (wrong, "delegation to the lowest envelope"),
        "switch": (switch, "round-robin switching every k steps"),
        "all": (everything, "union of all families"),
    }
    if name not in families:
        raise ParameterDomainError(f"unknown policy family {name!r}; expected one of {', '.join(FAMILY_NAMES)}")
    enumerator, description = families[name]
    return PolicyFamily(name=name, description=description, enumerator=enumerator)


@dataclass
class CandidateResult:
    name: str
    principal_value: float
    feasible: bool
    min_worker_value: float
    witness: Optional[ProductState] = None


@dataclass
class ContestEnumeration:
    """Таблица ценностей допустимых конкурсов семейства."""

    instance_hash: str
    family: str
    candidates: list[CandidateResult] = field(default_factory=list)

    @property
    def n_candidates(self) -> int:
        return len(self.candidates)

    @property
    def n_feasible(self) -> int:
        return sum(1 for c in self.candidates if c.feasible)

    @property
    def best(self) -> Optional[CandidateResult]:
        feasible = [c for c in self.candidates if c.feasible]
        return max(feasible, key=lambda c: c.principal_value) if feasible else None

    @property
    def best_value(self) -> float:
        best = self.best
        return best.principal_value if best is not None else -math.inf

    def values(self) -> dict[str, float]:
        return {c.name: c.principal_value for c in self.candidates if c.feasible}

    def to_dict(self) -> dict[str, Any]:
        infeasible = [c for c in self.candidates if not c.feasible]
        witness = None
        if infeasible:
            worst = min(infeasible, key=lambda c: c.min_worker_value)
            witness = {
                "policy": worst.name,
                "worker_value": worst.min_worker_value,
                "state": None if worst.witness is None else [list(w) for w in worst.witness.workers],
            }
        best = self.best
        return {
            "instance_hash": self.instance_hash,
            "family": self.family,
            "n_candidates": self.n_candidates,
            "n_feasible": self.n_feasible,
            "best_value": self.best_value,
            "best_policy": None if best is None else best.name,
            "witness": witness,
        }

    def rows(self) -> list[dict[str, Any]]:
        return [
            {"policy": c.name, "principal_value": c.principal_value, "feasible": c.feasible, "min_worker_value": c.min_worker_value}
            for c in self.candidates
        ]


def instance_hash(config: ContestConfig) -> str:
    return fingerprint(
        {"workers": [w.spec_hash for w in config.workers], "outside_option": config.outside_option, "priority": config.priority}
    )


def _score(config: ContestConfig, tables: tuple[IndexTable, ...], policy: Policy, max_states: int) -> CandidateResult:
    evaluation = evaluate_policy(config, policy, tables=tables, max_states=max_states)
    value, _worker, state = evaluation.min_worker_value()
    feasible = value >= -FEASIBILITY_TOL
    return CandidateResult(
        name=policy.name,
        principal_value=evaluation.principal_value,
        feasible=feasible,
        min_worker_value=value,
        witness=None if feasible else state,
    )


def enumerate_feasible_contests(
    config: ContestConfig,
    family: PolicyFamily | str,
    *,
    tables: Optional[Sequence[IndexTable]] = None,
    max_states: int = DEFAULT_MAX_PRODUCT_STATES,
    threads: int = 1,
) -> ContestEnumeration:
    """Оценить каждого кандидата семейства точно; недопустимые по участию отмечаются свидетелем."""
    tables = tuple(tables) if tables is not None else build_tables(config)
    if isinstance(family, str):
        family = policy_family(config, tables, family)
    candidates = list(family)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda p: _score(config, tables, p, max_states), candidates))
    else:
        results = [_score(config, tables, p, max_states) for p in candidates]
    enumeration = ContestEnumeration(instance_hash=instance_hash(config), family=family.name, candidates=results)
    logger.info(
        "family %s: %d candidates, %d feasible, best %.10g",
        family.name,
        enumeration.n_candidates,
        enumeration.n_feasible,
        enumeration.best_value,
    )
    return enumeration


__all__ = [
    "brute_force_chain_index",
    "brute_force_gittins",
    "brute_force_retirement",
    "bandit_value",
    "brute_force_single_arm",
    "has_corridor_structure",
    "SingleArmOracleResult",
    "ContestRule",
    "PolicyFamily",
    "policy_family",
    "FAMILY_NAMES",
    "CandidateResult",
    "ContestEnumeration",
    "enumerate_feasible_contests",
    "instance_hash",
]
