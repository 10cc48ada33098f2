"""Конкурс за повышение: индексное правило делегирования, симуляция, учёт выплат.

Событийный движок идёт шагами Δ. Точная оценка политики решает линейную систему
на произведении расширенных цепей (x, m, огибающая) всех работников.
"""

from __future__ import annotations

import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Literal, NamedTuple, Optional, Protocol, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .exceptions import InstanceTooLargeError, ParameterDomainError, PolicyError, SolverError
from .index import IndexTable, build_index_table, lower_envelope
from .logging import get_logger
from .typeproc import step as chain_step
from .types import ContestEvent, ContestTrace, Outcome
from .utils import mean_and_se, spawn_generators
from .worker import WorkerSpec

logger = get_logger("engine")

BLOCK_SIZE = 256
IR_TOL = 1e-8
DEFAULT_MAX_PRODUCT_STATES = 200_000
_HORIZON_WEIGHT = 1e-9


@dataclass(frozen=True)
class ContestConfig:
    """Параметры конкурса: работники, внешний вариант W, приоритет, предел горизонта."""

    workers: tuple[WorkerSpec, ...]
    outside_option: float = 0.0
    priority: Optional[tuple[int, ...]] = None
    horizon_cap: Optional[float] = None
    replications: int = 0
    seed: int = 0

    def __post_init__(self) -> None:
        workers = tuple(self.workers)
        if not workers:
            raise ParameterDomainError("contest needs at least one worker")
        first = workers[0]
        for i, w in enumerate(workers[1:], start=1):
            if not math.isclose(w.discount, first.discount, rel_tol=1e-12, abs_tol=0.0):
                raise ParameterDomainError(f"worker {i} discount {w.discount} differs from {first.discount}")
            if not math.isclose(w.chain.step, first.chain.step, rel_tol=1e-12, abs_tol=0.0):
                raise ParameterDomainError(f"worker {i} step {w.chain.step} differs from {first.chain.step}")
        if not (self.outside_option >= 0 and math.isfinite(self.outside_option)):
            raise ParameterDomainError(f"outside option must be finite and nonnegative, got {self.outside_option}")
        priority = tuple(range(len(workers))) if self.priority is None else tuple(int(p) for p in self.priority)
        if sorted(priority) != list(range(len(workers))):
            raise ParameterDomainError(f"priority {priority} is not an order of worker ids")
        cap = self.horizon_cap
        if cap is None:
            cap = 1.5 * math.log(1.0 / _HORIZON_WEIGHT) / first.discount
        if not cap > 0:
            raise ParameterDomainError(f"horizon cap must be positive, got {cap}")
        if math.exp(-first.discount * cap) >= _HORIZON_WEIGHT:
            logger.warning("horizon cap %.4g leaves discount weight %.3g beyond the cap", cap, math.exp(-first.discount * cap))
        if self.replications < 0:
            raise ParameterDomainError(f"replications must be nonnegative, got {self.replications}")
        object.__setattr__(self, "workers", workers)
        object.__setattr__(self, "outside_option", float(self.outside_option))
        object.__setattr__(self, "priority", priority)
        object.__setattr__(self, "horizon_cap", float(cap))

    @property
    def n_workers(self) -> int:
        return len(self.workers)

    @property
    def step(self) -> float:
        return self.workers[0].chain.step

    @property
    def discount(self) -> float:
        return self.workers[0].discount

    @property
    def beta(self) -> float:
        return self.workers[0].beta

    @property
    def weight(self) -> float:
        return self.workers[0].weight

    @property
    def horizon_steps(self) -> int:
        return int(math.ceil(self.horizon_cap / self.step))


def build_tables(config: ContestConfig, *, cache_dir: Any = None, threads: int = 1) -> tuple[IndexTable, ...]:
    return tuple(build_index_table(w, cache_dir=cache_dir, threads=threads) for w in config.workers)


def index_at(table: IndexTable, x: int, m: int, discount: float) -> float:
    """Γ^s(x, m); состояния за зоной повышения получают замороженный π̄(x)/r."""
    value = table.strategic.get((int(x), int(m)))
    if value is None:
        return float(table.perpetuity[x]) / discount
    return value


# ---------------------------------------------------------------------------
# Политики
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class Observation:
    """То, что видит принципал: типы, минимумы, нижние огибающие индексов и номер шага."""

    xs: tuple[int, ...]
    ms: tuple[int, ...]
    envs: tuple[float, ...]
    step: int


@dataclass(frozen=True, slots=True)
class Action:
    kind: Literal["delegate", "promote", "outside"]
    worker: Optional[int] = None

    @classmethod
    def delegate(cls, worker: int) -> "Action":
        return cls("delegate", int(worker))

    @classmethod
    def promote(cls, worker: int) -> "Action":
        return cls("promote", int(worker))

    @classmethod
    def outside(cls) -> "Action":
        return cls("outside", None)


class Policy(Protocol):
    """Правило принципала. Зависимость от шага допускается только через step % period."""

    name: str
    period: int

    def decide(self, obs: Observation) -> Action: ...


def _check_action(action: Any, n_workers: int, policy_name: str) -> Action:
    if not isinstance(action, Action):
        raise PolicyError(f"policy {policy_name!r} returned {action!r}, not an Action")
    if action.kind == "outside":
        return action
    if action.kind not in ("delegate", "promote"):
        raise PolicyError(f"policy {policy_name!r} returned unknown action {action.kind!r}")
    if action.worker is None or not 0 <= action.worker < n_workers:
        raise PolicyError(f"policy {policy_name!r} addressed worker {action.worker!r} of {n_workers}")
    return action


class IndexContestPolicy:
    """Индексный конкурс: повышение в зоне x ≥ P̄(m), выход при max Γ̲ ≤ W, иначе argmax Γ̲.

    active ограничивает конкурс подмножеством работников (остальные простаивают).
    """

    period = 1

    def __init__(
        self,
        tables: Sequence[IndexTable],
        outside_option: float,
        priority: Optional[Sequence[int]] = None,
        active: Optional[Sequence[int]] = None,
    ) -> None:
        self.tables = tuple(tables)
        self.outside_option = float(outside_option)
        order = tuple(priority) if priority is not None else tuple(range(len(self.tables)))
        if active is not None:
            allowed = set(int(a) for a in active)
            order = tuple(i for i in order if i in allowed)
        self.order = order
        self.name = "index" if active is None else "index-restricted"

    def decide(self, obs: Observation) -> Action:
        for i in self.order:
            x, m = obs.xs[i], obs.ms[i]
            if x > m and x >= self.tables[i].thresholds[m]:
                return Action.promote(i)
        best_value = max(obs.envs[i] for i in self.order)
        if best_value <= self.outside_option:
            return Action.outside()
        best = next(i for i in self.order if obs.envs[i] == best_value)
        if obs.xs[best] >= self.tables[best].thresholds[obs.ms[best]]:
            return Action.promote(best)
        return Action.delegate(best)


class AlwaysDelegate:
    """Все шаги одному работнику; повышение при x ≥ promote_at (None — никогда)."""

    period = 1

    def __init__(self, worker: int, promote_at: Optional[int] = None) -> None:
        self.worker = int(worker)
        self.promote_at = promote_at
        self.name = f"always-{self.worker}"

    def decide(self, obs: Observation) -> Action:
        if self.promote_at is not None and obs.xs[self.worker] >= self.promote_at:
            return Action.promote(self.worker)
        return Action.delegate(self.worker)


class OutsidePolicy:
    period = 1
    name = "outside"

    def decide(self, obs: Observation) -> Action:
        return Action.outside()


# ---------------------------------------------------------------------------
# Точная оценка на произведении расширенных цепей
# ---------------------------------------------------------------------------


class ProductState(NamedTuple):
    workers: tuple[tuple[int, int, float], ...]
    phase: int


@dataclass
class PolicyEvaluation:
    """Ценности принципала, работников и огибающей во всех достижимых состояниях."""

    states: list[ProductState]
    index: dict[ProductState, int]
    actions: list[Action]
    principal_values: np.ndarray
    worker_values: tuple[np.ndarray, ...]
    envelope_values: np.ndarray

    @property
    def principal_value(self) -> float:
        return float(self.principal_values[0])

    @property
    def envelope_value(self) -> float:
        return float(self.envelope_values[0])

    def worker_value(self, i: int) -> float:
        return float(self.worker_values[i][0])

    def min_worker_value(self) -> tuple[float, int, ProductState]:
        best = (math.inf, -1, self.states[0])
        for i, values in enumerate(self.worker_values):
            k = int(np.argmin(values))
            if values[k] < best[0]:
                best = (float(values[k]), i, self.states[k])
        return best


def initial_state(config: ContestConfig, tables: Sequence[IndexTable]) -> ProductState:
    r = config.discount
    return ProductState(
        workers=tuple((w.initial, w.initial, index_at(t, w.initial, w.initial, r)) for w, t in zip(config.workers, tables)),
        phase=0,
    )


def _observe(state: ProductState, step: int) -> Observation:
    return Observation(
        xs=tuple(w[0] for w in state.workers),
        ms=tuple(w[1] for w in state.workers),
        envs=tuple(w[2] for w in state.workers),
        step=step,
    )


def evaluate_policy(
    config: ContestConfig,
    policy: Policy,
    *,
    tables: Optional[Sequence[IndexTable]] = None,
    max_states: int = DEFAULT_MAX_PRODUCT_STATES,
) -> PolicyEvaluation:
    """Оценить марковскую политику точно: одна разреженная система на все ценности.

    Шаг делегирования платит принципалу a·π, работнику −a·c, огибающей (1−β)·max(W, max Γ̲).
    Повышение: π̄(x)/r принципалу, g работнику, огибающей max(W, max Γ̲). Выход: W.
    """
    tables = tuple(tables) if tables is not None else build_tables(config)
    n = config.n_workers
    beta, a, r, W = config.beta, config.weight, config.discount, config.outside_option
    period = max(1, int(getattr(policy, "period", 1)))
    name = getattr(policy, "name", type(policy).__name__)

    start = initial_state(config, tables)
    states: list[ProductState] = [start]
    index: dict[ProductState, int] = {start: 0}
    actions: list[Action] = []
    rewards: list[list[float]] = []
    rows: list[int] = []
    cols: list[int] = []
    probs: list[float] = []

    k = 0
    while k < len(states):
        state = states[k]
        action = _check_action(policy.decide(_observe(state, state.phase)), n, name)
        actions.append(action)
        envs = [w[2] for w in state.workers]
        top = max(W, max(envs))
        reward = [0.0] * (n + 2)
        if action.kind == "outside":
            reward[0] = W
            reward[n + 1] = W
        elif action.kind == "promote":
            i = action.worker
            x = state.workers[i][0]
            reward[0] = float(tables[i].perpetuity[x]) / r
            reward[1 + i] = config.workers[i].prize
            reward[n + 1] = top
        else:
            i = action.worker
            spec = config.workers[i]
            x, m, env = state.workers[i]
            reward[0] = a * spec.pi[x]
            reward[1 + i] = -a * spec.cost[x]
            reward[n + 1] = (1.0 - beta) * top
            phase = (state.phase + 1) % period
            kernel_row = spec.chain.kernel[x]
            for y in np.flatnonzero(kernel_row > 0.0):
                y = int(y)
                m2 = min(m, y)
                env2 = min(env, index_at(tables[i], y, m2, r))
                workers = list(state.workers)
                workers[i] = (y, m2, env2)
                nxt = ProductState(tuple(workers), phase)
                j = index.get(nxt)
                if j is None:
                    j = len(states)
                    if j >= max_states:
                        raise InstanceTooLargeError(
                            f"product chain exceeds {max_states} states; use Monte Carlo mode",
                            size=j + 1,
                            limit=max_states,
                        )
                    index[nxt] = j
                    states.append(nxt)
                rows.append(k)
                cols.append(j)
                probs.append(float(kernel_row[y]))
        rewards.append(reward)
        k += 1

    size = len(states)
    transition = sparse.csr_matrix((probs, (rows, cols)), shape=(size, size))
    system = (sparse.identity(size, format="csc") - beta * transition.tocsc()).tocsc()
    rhs = np.asarray(rewards, dtype=float)
    try:
        solution = spsolve(system, rhs)
    except Exception as exc:  # noqa: BLE001
        raise SolverError(f"product-chain evaluation failed: {exc}", original=exc) from exc
    solution = np.asarray(solution, dtype=float).reshape(size, n + 2)
    logger.debug("evaluated policy %s on %d product states", name, size)
    return PolicyEvaluation(
        states=states,
        index=index,
        actions=actions,
        principal_values=solution[:, 0].copy(),
        worker_values=tuple(solution[:, 1 + i].copy() for i in range(n)),
        envelope_values=solution[:, n + 1].copy(),
    )


# ---------------------------------------------------------------------------
# Симуляция
# ---------------------------------------------------------------------------


def run_policy(
    config: ContestConfig,
    policy: Policy,
    rng: np.random.Generator,
    *,
    tables: Optional[Sequence[IndexTable]] = None,
    record_values: bool = False,
    evaluation: Optional[PolicyEvaluation] = None,
) -> ContestTrace:
    """Одна траектория конкурса под произвольной политикой с тем же учётом, что и точная оценка."""
    tables = tuple(tables) if tables is not None else build_tables(config)
    n = config.n_workers
    beta, a, r, W, dt = config.beta, config.weight, config.discount, config.outside_option, config.step
    period = max(1, int(getattr(policy, "period", 1)))
    name = getattr(policy, "name", type(policy).__name__)
    if record_values and evaluation is None:
        evaluation = evaluate_policy(config, policy, tables=tables)

    state = initial_state(config, tables)
    workers = [list(w) for w in state.workers]
    events: list[ContestEvent] = []
    principal = 0.0
    envelope = 0.0
    payoffs = [0.0] * n
    clocks = [0.0] * n
    disc = 1.0
    outcome: Optional[Outcome] = None

    for t in range(config.horizon_steps):
        snapshot = ProductState(tuple((w[0], w[1], w[2]) for w in workers), t % period)
        envs = tuple(w[2] for w in workers)
        top = max(W, max(envs))
        values = None
        if evaluation is not None and record_values:
            k = evaluation.index.get(snapshot)
            if k is not None:
                values = tuple(float(v[k]) for v in evaluation.worker_values)
        action = _check_action(policy.decide(_observe(snapshot, t)), n, name)

        if action.kind == "outside":
            principal += disc * W
            envelope += disc * W
            events.append(ContestEvent(t, t * dt, "outside", None, None, None, None, None, None, envs, values))
            outcome = Outcome("outside_option", t, t * dt)
            break

        i = action.worker
        x, m, env = workers[i]
        if action.kind == "promote":
            principal += disc * float(tables[i].perpetuity[x]) / r
            envelope += disc * top
            payoffs[i] += disc * config.workers[i].prize
            events.append(ContestEvent(t, t * dt, "promote", i, x, m, x, m, env, envs, values))
            outcome = Outcome("promoted", t, t * dt, worker=i, state=x)
            break

        spec = config.workers[i]
        principal += disc * a * spec.pi[x]
        payoffs[i] -= disc * a * spec.cost[x]
        envelope += disc * (1.0 - beta) * top
        y = chain_step(spec.chain, x, rng)
        m2 = min(m, y)
        env2 = min(env, index_at(tables[i], y, m2, r))
        workers[i] = [y, m2, env2]
        clocks[i] += dt
        events.append(ContestEvent(t, t * dt, "delegate", i, x, m, y, m2, env, envs, values))
        disc *= beta

    steps = len(events)
    if outcome is None:
        outcome = Outcome("capped", config.horizon_steps, config.horizon_steps * dt)
    return ContestTrace(
        events=events,
        outcome=outcome,
        principal_payoff=principal,
        envelope_payoff=envelope,
        worker_payoffs=tuple(payoffs),
        effort_clocks=tuple(clocks),
        steps=steps,
    )


def run_index_contest(
    config: ContestConfig,
    rng: np.random.Generator,
    *,
    tables: Optional[Sequence[IndexTable]] = None,
    record_values: bool = False,
) -> ContestTrace:
    tables = tuple(tables) if tables is not None else build_tables(config)
    policy = IndexContestPolicy(tables, config.outside_option, config.priority)
    return run_policy(config, policy, rng, tables=tables, record_values=record_values)


@dataclass
class ContestSummary:
    """Агрегат репликаций в фиксированном порядке (не зависит от числа потоков)."""

    replications: int
    principal: np.ndarray
    envelope: np.ndarray
    worker_payoffs: np.ndarray
    outcomes: list[str]
    promoted_worker: np.ndarray
    promotion_time: np.ndarray
    promotion_state: np.ndarray
    capped: int
    traces: list[ContestTrace] = field(default_factory=list)

    def promotion_share(self, worker: int) -> tuple[float, float]:
        hits = (self.promoted_worker == worker).astype(float)
        return mean_and_se(hits)

    def to_dict(self) -> dict[str, Any]:
        n_workers = self.worker_payoffs.shape[1] if self.worker_payoffs.ndim == 2 else 0
        p_mean, p_se = mean_and_se(self.principal)
        e_mean, e_se = mean_and_se(self.envelope)
        out: dict[str, Any] = {
            "replications": self.replications,
            "principal_payoff": {"mean": p_mean, "se": p_se},
            "envelope_payoff": {"mean": e_mean, "se": e_se},
            "worker_payoffs": [],
            "outcomes": {kind: self.outcomes.count(kind) / max(1, self.replications) for kind in ("promoted", "outside_option", "capped")},
            "promotion_shares": [],
            "capped": self.capped,
        }
        for i in range(n_workers):
            w_mean, w_se = mean_and_se(self.worker_payoffs[:, i])
            s_mean, s_se = self.promotion_share(i)
            out["worker_payoffs"].append({"worker": i, "mean": w_mean, "se": w_se})
            out["promotion_shares"].append({"worker": i, "share": s_mean, "se": s_se})
        times = self.promotion_time[np.isfinite(self.promotion_time)]
        if times.size:
            qs = (0.1, 0.25, 0.5, 0.75, 0.9)
            out["promotion_time_quantiles"] = {str(q): float(v) for q, v in zip(qs, np.quantile(times, qs))}
        else:
            out["promotion_time_quantiles"] = {}
        return out


PolicyFactory = Callable[[np.random.Generator], Policy]


def _run_block(
    config: ContestConfig,
    tables: tuple[IndexTable, ...],
    factory: PolicyFactory,
    rng: np.random.Generator,
    count: int,
) -> list[ContestTrace]:
    return [run_policy(config, factory(rng), rng, tables=tables) for _ in range(count)]


def simulate_contests(
    config: ContestConfig,
    *,
    tables: Optional[Sequence[IndexTable]] = None,
    replications: Optional[int] = None,
    seed: Optional[int] = None,
    threads: int = 1,
    policy_factory: Optional[PolicyFactory] = None,
    keep_traces: Optional[int] = 0,
) -> ContestSummary:
    """Монте-Карло по блокам фиксированного размера; блок b получает поток (seed, b).

    keep_traces=None сохраняет все траектории.
    """
    tables = tuple(tables) if tables is not None else build_tables(config)
    total = config.replications if replications is None else int(replications)
    seed = config.seed if seed is None else int(seed)
    if total <= 0:
        raise ParameterDomainError(f"replications must be positive, got {total}")
    if policy_factory is None:
        shared = IndexContestPolicy(tables, config.outside_option, config.priority)
        policy_factory = lambda _rng: shared  # noqa: E731

    n_blocks = math.ceil(total / BLOCK_SIZE)
    generators = spawn_generators(seed, n_blocks)
    sizes = [min(BLOCK_SIZE, total - b * BLOCK_SIZE) for b in range(n_blocks)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            blocks = list(pool.map(lambda b: _run_block(config, tables, policy_factory, generators[b], sizes[b]), range(n_blocks)))
    else:
        blocks = [_run_block(config, tables, policy_factory, generators[b], sizes[b]) for b in range(n_blocks)]

    traces = [trace for block in blocks for trace in block]
    n = config.n_workers
    promoted_worker = np.full(total, -1, dtype=int)
    promotion_time = np.full(total, np.nan)
    promotion_state = np.full(total, -1, dtype=int)
    for k, trace in enumerate(traces):
        if trace.outcome.kind == "promoted":
            promoted_worker[k] = trace.outcome.worker
            promotion_time[k] = trace.outcome.time
            promotion_state[k] = trace.outcome.state
    capped = sum(1 for t in traces if t.outcome.kind == "capped")
    if capped:
        logger.warning("%d of %d contests reached the horizon cap", capped, total)
    keep = traces if keep_traces is None else traces[: max(0, int(keep_traces))]
    return ContestSummary(
        replications=total,
        principal=np.array([t.principal_payoff for t in traces]),
        envelope=np.array([t.envelope_payoff for t in traces]),
        worker_payoffs=np.array([t.worker_payoffs for t in traces], dtype=float).reshape(total, n),
        outcomes=[t.outcome.kind for t in traces],
        promoted_worker=promoted_worker,
        promotion_time=promotion_time,
        promotion_state=promotion_state,
        capped=capped,
        traces=keep,
    )


# ---------------------------------------------------------------------------
# Огибающая, участие, разложение по времени
# ---------------------------------------------------------------------------


def principal_value_envelope(
    config: ContestConfig,
    *,
    tables: Optional[Sequence[IndexTable]] = None,
    mode: Literal["exact", "monte_carlo"] = "exact",
    max_states: int = DEFAULT_MAX_PRODUCT_STATES,
    replications: Optional[int] = None,
    seed: Optional[int] = None,
    threads: int = 1,
) -> float:
    """E[Σ β^t (1−β) max(W, max_i Γ̲_i)]: точно на произведении цепей или средним по траекториям."""
    tables = tuple(tables) if tables is not None else build_tables(config)
    if mode == "exact":
        policy = IndexContestPolicy(tables, config.outside_option, config.priority)
        return evaluate_policy(config, policy, tables=tables, max_states=max_states).envelope_value
    if mode == "monte_carlo":
        summary = simulate_contests(config, tables=tables, replications=replications, seed=seed, threads=threads)
        return float(summary.envelope.mean())
    raise ParameterDomainError(f"unknown envelope mode {mode!r}")


@dataclass
class IRReport:
    """Итог проверки участия: минимум ценности продолжения и состояния-свидетели."""

    policy: str
    min_value: float
    worker: int
    witness: Optional[ProductState]
    negatives: list[tuple[int, ProductState, float]]
    states: int

    @property
    def passed(self) -> bool:
        return not self.negatives

    def to_dict(self) -> dict[str, Any]:
        return {
            "policy": self.policy,
            "min_value": self.min_value,
            "worker": self.worker,
            "witness": None if self.witness is None else [list(w) for w in self.witness.workers],
            "negative_states": len(self.negatives),
            "states": self.states,
            "passed": self.passed,
        }


def check_ir(
    config: ContestConfig,
    policy: Policy,
    *,
    tables: Optional[Sequence[IndexTable]] = None,
    max_states: int = DEFAULT_MAX_PRODUCT_STATES,
    evaluation: Optional[PolicyEvaluation] = None,
) -> IRReport:
    """Ценность продолжения каждого работника во всех достижимых состояниях."""
    if evaluation is None:
        evaluation = evaluate_policy(config, policy, tables=tables, max_states=max_states)
    negatives: list[tuple[int, ProductState, float]] = []
    for i, values in enumerate(evaluation.worker_values):
        for k in np.flatnonzero(values < -IR_TOL):
            negatives.append((i, evaluation.states[int(k)], float(values[k])))
    min_value, worker, state = evaluation.min_worker_value()
    witness = min(negatives, key=lambda item: item[2])[1] if negatives else None
    return IRReport(
        policy=getattr(policy, "name", type(policy).__name__),
        min_value=min_value,
        worker=worker,
        witness=witness,
        negatives=negatives,
        states=len(evaluation.states),
    )


@dataclass
class TimeChange:
    order: list[int]
    clocks: list[np.ndarray]


def time_change_construction(
    index_paths: Sequence[Sequence[float]],
    *,
    priority: Optional[Sequence[int]] = None,
    outside_option: Optional[float] = None,
) -> TimeChange:
    """Часы усилий T^i по уровням нижних огибающих.

    σ_i(W) = #{k : Γ̲_i[k] > W}; глобальное время проходит уровни сверху вниз,
    на одном уровне работники обслуживаются в порядке приоритета.
    outside_option обрезает разложение на уровне W.
    """
    envs = [lower_envelope(path) if len(path) else np.empty(0) for path in index_paths]
    n = len(envs)
    priority = tuple(priority) if priority is not None else tuple(range(n))
    levels = sorted({float(v) for env in envs for v in env}, reverse=True)
    if outside_option is not None:
        levels = [lv for lv in levels if lv > outside_option]

    order: list[int] = []
    done = [0] * n
    for level in levels:
        for i in priority:
            env = envs[i]
            while done[i] < env.size and env[done[i]] == level:
                order.append(i)
                done[i] += 1

    clocks = [np.zeros(len(order) + 1, dtype=int) for _ in range(n)]
    for t, i in enumerate(order):
        for j in range(n):
            clocks[j][t + 1] = clocks[j][t] + (1 if j == i else 0)
    return TimeChange(order=order, clocks=clocks)


def realized_index_paths(trace: ContestTrace, n_workers: int) -> list[list[float]]:
    """Огибающие на шагах, которые каждый работник реально отработал."""
    paths: list[list[float]] = [[] for _ in range(n_workers)]
    for event in trace.events:
        if event.action == "delegate" and event.worker is not None:
            paths[event.worker].append(float(event.envelopes[event.worker]))
    return paths


@dataclass(frozen=True, slots=True)
class TrialSpell:
    """Краткосрочный пробный контракт: непрерывная серия шагов одного работника."""

    worker: int
    start_step: int
    end_step: int
    running_min: int
    promised_threshold: int
    termination_level: float
    result: Literal["promoted", "terminated", "outside", "capped"]


def trial_spells(trace: ContestTrace, tables: Sequence[IndexTable], outside_option: float) -> list[TrialSpell]:
    """Представить траекторию индексного конкурса как цепочку пробных контрактов."""
    spells: list[TrialSpell] = []
    events = trace.events
    k = 0
    while k < len(events):
        event = events[k]
        if event.action == "outside":
            break
        i = event.worker
        start = k
        while k < len(events) and events[k].action == "delegate" and events[k].worker == i:
            k += 1
        others = [e for j, e in enumerate(event.envelopes) if j != i]
        level = max([outside_option, *others])
        m0 = event.m_before if event.m_before is not None else 0
        end_step = events[k - 1].step + 1 if k > start else event.step
        if k < len(events):
            nxt = events[k]
            if nxt.action == "promote" and nxt.worker == i:
                result = "promoted"
                k += 1
            elif nxt.action == "outside":
                result = "outside"
            else:
                result = "terminated"
        else:
            result = "capped" if trace.outcome.kind == "capped" else "terminated"
        spells.append(
            TrialSpell(
                worker=i,
                start_step=event.step,
                end_step=end_step,
                running_min=m0,
                promised_threshold=int(tables[i].thresholds[m0]),
                termination_level=float(level),
                result=result,
            )
        )
    return spells


__all__ = [
    "ContestConfig",
    "Observation",
    "Action",
    "Policy",
    "IndexContestPolicy",
    "AlwaysDelegate",
    "OutsidePolicy",
    "ProductState",
    "PolicyEvaluation",
    "evaluate_policy",
    "run_policy",
    "run_index_contest",
    "ContestSummary",
    "simulate_contests",
    "principal_value_envelope",
    "IRReport",
    "check_ir",
    "TimeChange",
    "time_change_construction",
    "realized_index_paths",
    "TrialSpell",
    "trial_spells",
    "build_tables",
    "index_at",
    "initial_state",
]
