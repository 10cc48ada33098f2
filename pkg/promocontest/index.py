"""Индексы Гиттинса и стратегические индексы, ценность отставки, граница выхода.

Индексы хранятся в «единовременных» единицах: постоянный поток ρ имеет индекс ρ/r.
Основной путь вычисления — исключение состояний по убыванию индекса;
независимый путь — бисекция по ценности отставки.
"""

from __future__ import annotations

import os
import threading
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal, Mapping, Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from . import __version__
from .exceptions import NumericalError, ParameterDomainError, SolverError, StaleCacheError
from .logging import get_logger
from .utils import ensure_dir, read_json, write_json
from .worker import WorkerSpec, perpetuity_values, promotion_thresholds

logger = get_logger("index")

IndexMethod = Literal["elimination", "bisection"]

BISECTION_ITERATIONS = 60
VALUE_TOL = 1e-10
MONOTONE_TOL = 1e-9
MAX_VALUE_ITERATIONS = 200_000


@dataclass(frozen=True)
class FlowChain:
    """Цепь с потоком выигрыша: ядро, поток за единицу времени, β и вес шага a."""

    kernel: np.ndarray
    flow: np.ndarray
    beta: float
    weight: float
    discount: float
    labels: tuple[Any, ...] = ()

    @property
    def n_states(self) -> int:
        return int(self.flow.size)

    @classmethod
    def from_spec(cls, spec: WorkerSpec) -> "FlowChain":
        return cls(
            kernel=np.asarray(spec.chain.kernel, dtype=float),
            flow=np.asarray(spec.pi, dtype=float),
            beta=spec.beta,
            weight=spec.weight,
            discount=spec.discount,
            labels=tuple(range(spec.n_states)),
        )

    def lump(self, per_step_ratio: float) -> float:
        """Перевести отношение «награда за шаг / вес шага» в единовременную ценность."""
        return per_step_ratio / (1.0 - self.beta)


@dataclass(frozen=True)
class AugmentedChain:
    """Цепь пар (x, m): тип и текущий минимум, m' = min(m, x').

    Состояния с x ≥ P̄(m) поглощающие, их поток π̄(x).
    """

    states: tuple[tuple[int, int], ...]
    index: Mapping[tuple[int, int], int]
    kernel: np.ndarray
    flow: np.ndarray
    promoted: np.ndarray

    @property
    def n_states(self) -> int:
        return len(self.states)

    @classmethod
    def build(cls, spec: WorkerSpec) -> "AugmentedChain":
        thresholds = promotion_thresholds(spec)
        pbar = perpetuity_values(spec)
        base = spec.chain.kernel
        n = spec.n_states

        order: list[tuple[int, int]] = []
        index: dict[tuple[int, int], int] = {}
        queue: deque[tuple[int, int]] = deque()
        for x in range(n):
            index[(x, x)] = len(order)
            order.append((x, x))
            queue.append((x, x))
        edges: list[tuple[int, int, float]] = []
        while queue:
            x, m = queue.popleft()
            src = index[(x, m)]
            if x >= thresholds[m]:
                edges.append((src, src, 1.0))
                continue
            for y in np.flatnonzero(base[x] > 0.0):
                nxt = (int(y), min(m, int(y)))
                if nxt not in index:
                    index[nxt] = len(order)
                    order.append(nxt)
                    queue.append(nxt)
                edges.append((src, index[nxt], float(base[x, y])))

        size = len(order)
        kernel = np.zeros((size, size))
        for src, dst, prob in edges:
            kernel[src, dst] += prob
        promoted = np.array([x >= thresholds[m] for x, m in order], dtype=bool)
        flow = np.array([pbar[x] if promoted[k] else spec.pi[x] for k, (x, _m) in enumerate(order)])
        for arr in (kernel, flow, promoted):
            arr.setflags(write=False)
        return cls(states=tuple(order), index=index, kernel=kernel, flow=flow, promoted=promoted)

    def flow_chain(self, spec: WorkerSpec) -> FlowChain:
        return FlowChain(
            kernel=self.kernel,
            flow=self.flow,
            beta=spec.beta,
            weight=spec.weight,
            discount=spec.discount,
            labels=self.states,
        )


def _elimination_indices(chain: FlowChain) -> np.ndarray:
    """Исключение состояний по убыванию индекса.

    На каждом шаге состояние α с наибольшим отношением награды к дисконтированному
    времени получает индекс; затем переходы через α схлопываются в его предшественников.
    """
    n = chain.n_states
    q = chain.beta * np.array(chain.kernel, dtype=float)
    reward = chain.weight * np.array(chain.flow, dtype=float)
    time = np.ones(n)
    alive = np.ones(n, dtype=bool)
    ratio = np.empty(n)

    for _ in range(n):
        candidates = np.flatnonzero(alive)
        scores = reward[candidates] / time[candidates]
        alpha = int(candidates[int(np.argmax(scores))])
        ratio[alpha] = reward[alpha] / time[alpha]
        alive[alpha] = False

        stay = 1.0 - q[alpha, alpha]
        if stay <= 0.0:
            raise NumericalError(f"state {alpha} has no discounting left", residual=float(stay))
        preds = np.flatnonzero(alive & (q[:, alpha] > 0.0))
        if preds.size:
            f = q[preds, alpha] / stay
            reward[preds] += f * reward[alpha]
            time[preds] += f * time[alpha]
            row = q[alpha].copy()
            row[alpha] = 0.0
            q[preds] += np.outer(f, row)
        q[:, alpha] = 0.0

    return ratio / (1.0 - chain.beta)


def _policy_value(chain: FlowChain, cont: np.ndarray, W: float) -> np.ndarray:
    values = np.full(chain.n_states, float(W))
    idx = np.flatnonzero(cont)
    if idx.size == 0:
        return values
    stop = np.flatnonzero(~cont)
    mat = sparse.csr_matrix(chain.kernel)
    sub = mat[idx][:, idx]
    rhs = chain.weight * chain.flow[idx]
    if stop.size:
        rhs = rhs + chain.beta * np.asarray(mat[idx][:, stop].sum(axis=1)).ravel() * W
    system = sparse.identity(idx.size, format="csc") - chain.beta * sub.tocsc()
    try:
        sol = spsolve(system, rhs)
    except Exception as exc:  # noqa: BLE001 - spsolve бросает разные типы
        raise SolverError(f"policy evaluation failed: {exc}", original=exc) from exc
    values[idx] = np.atleast_1d(sol)
    return values


def _retirement_policy_iteration(chain: FlowChain, W: float) -> np.ndarray:
    # Говард: старт с «продолжать везде, где поток выше выплаты отставки»
    cont = chain.weight * chain.flow + chain.beta * W > W
    for _ in range(2 * chain.n_states + 10):
        values = _policy_value(chain, cont, W)
        q_cont = chain.weight * chain.flow + chain.beta * (chain.kernel @ values)
        new_cont = q_cont > W + 1e-13
        if np.array_equal(new_cont, cont):
            return np.maximum(values, W)
        cont = new_cont
    raise NumericalError("policy iteration did not stabilise", residual=float("nan"))


def _retirement_value_iteration(chain: FlowChain, W: float) -> np.ndarray:
    values = np.full(chain.n_states, float(W))
    residual = float("inf")
    for _ in range(MAX_VALUE_ITERATIONS):
        new = np.maximum(W, chain.weight * chain.flow + chain.beta * (chain.kernel @ values))
        residual = float(np.max(np.abs(new - values)))
        values = new
        if residual < VALUE_TOL * (1.0 - chain.beta):
            return values
    raise NumericalError(f"value iteration did not converge (residual {residual:.3g})", residual=residual)


def retirement_values(chain: FlowChain, W: float, *, method: str = "policy") -> np.ndarray:
    """V(·; W) = max(W, a·f + β·P·V) во всех состояниях."""
    if W < 0:
        raise ParameterDomainError(f"retirement payoff must be nonnegative, got {W}")
    if method == "policy":
        return _retirement_policy_iteration(chain, float(W))
    if method == "value":
        return _retirement_value_iteration(chain, float(W))
    raise ParameterDomainError(f"unknown retirement method {method!r}")


def retirement_value(chain: FlowChain, state: int, W: float, *, method: str = "policy") -> float:
    return float(retirement_values(chain, W, method=method)[state])


def _bisection_index(chain: FlowChain, state: int, upper: float) -> float:
    lo, hi = 0.0, float(upper)
    seen: list[tuple[float, float]] = []
    for _ in range(BISECTION_ITERATIONS):
        mid = 0.5 * (lo + hi)
        gap = retirement_value(chain, state, mid) - mid
        # V(W) − W не возрастает по W
        for w_prev, gap_prev in seen:
            if (w_prev < mid and gap > gap_prev + MONOTONE_TOL) or (w_prev > mid and gap < gap_prev - MONOTONE_TOL):
                raise NumericalError(
                    f"V(W) - W is not monotone between W={w_prev:.6g} and W={mid:.6g} at state {state}",
                    residual=abs(gap - gap_prev),
                )
        seen.append((mid, gap))
        if gap > 1e-12:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def chain_indices(chain: FlowChain, *, method: IndexMethod = "elimination", threads: int = 1) -> np.ndarray:
    """Индекс Гиттинса каждого состояния цепи с потоком."""
    if method == "elimination":
        return _elimination_indices(chain)
    if method != "bisection":
        raise ParameterDomainError(f"unknown index method {method!r}")
    upper = float(np.max(chain.flow)) / chain.discount * (1.0 + 1e-9) + 1.0
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return np.array(list(pool.map(lambda s: _bisection_index(chain, s, upper), range(chain.n_states))))
    return np.array([_bisection_index(chain, s, upper) for s in range(chain.n_states)])


def gittins_index(spec: WorkerSpec, *, method: IndexMethod = "elimination", threads: int = 1) -> np.ndarray:
    """Γ^g(x) для всех x базовой цепи с потоком π."""
    return chain_indices(FlowChain.from_spec(spec), method=method, threads=threads)


def strategic_index(
    spec: WorkerSpec, *, method: IndexMethod = "elimination", threads: int = 1
) -> dict[tuple[int, int], float]:
    """Γ^s(x, m) на расширенной цепи; в зоне повышения равен π̄(x)/r."""
    aug = AugmentedChain.build(spec)
    values = chain_indices(aug.flow_chain(spec), method=method, threads=threads)
    return {state: float(values[k]) for k, state in enumerate(aug.states)}


@dataclass(frozen=True)
class IndexTable:
    """Неизменяемая таблица индексов одного работника с порогами и перпетуитетами."""

    spec_hash: str
    gittins: np.ndarray
    strategic: Mapping[tuple[int, int], float]
    thresholds: np.ndarray
    perpetuity: np.ndarray
    method: str = "elimination"
    meta: Mapping[str, Any] = field(default_factory=dict)

    def strategic_at(self, x: int, m: int) -> float:
        try:
            return self.strategic[(int(x), int(m))]
        except KeyError:
            raise KeyError(f"augmented state ({x}, {m}) is not reachable") from None

    def threshold(self, m: int) -> int:
        return int(self.thresholds[m])

    def to_dict(self) -> dict[str, Any]:
        return {
            "spec_hash": self.spec_hash,
            "method": self.method,
            "gittins": [float(v) for v in self.gittins],
            "strategic": [[x, m, float(v)] for (x, m), v in sorted(self.strategic.items())],
            "thresholds": [int(v) for v in self.thresholds],
            "perpetuity": [float(v) for v in self.perpetuity],
            "meta": dict(self.meta),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "IndexTable":
        return cls(
            spec_hash=str(data["spec_hash"]),
            gittins=np.asarray(data["gittins"], dtype=float),
            strategic={(int(x), int(m)): float(v) for x, m, v in data["strategic"]},
            thresholds=np.asarray(data["thresholds"], dtype=int),
            perpetuity=np.asarray(data["perpetuity"], dtype=float),
            method=str(data.get("method", "elimination")),
            meta=dict(data.get("meta", {})),
        )

    def rows(self) -> list[dict[str, Any]]:
        out: list[dict[str, Any]] = []
        for (x, m), value in sorted(self.strategic.items()):
            out.append(
                {
                    "x": x,
                    "m": m,
                    "gittins": float(self.gittins[x]),
                    "strategic": value,
                    "threshold": int(self.thresholds[m]),
                    "perpetuity": float(self.perpetuity[x]),
                }
            )
        return out


def save_index_table(table: IndexTable, path: Path) -> Path:
    return write_json(table.to_dict(), path)


def load_index_table(path: Path, spec: Optional[WorkerSpec] = None) -> IndexTable:
    """Прочитать таблицу; при несовпадении хеша спецификации — StaleCacheError."""
    table = IndexTable.from_dict(read_json(path))
    if spec is not None and table.spec_hash != spec.spec_hash:
        raise StaleCacheError(
            f"index table {path} was built for {table.spec_hash[:12]}, expected {spec.spec_hash[:12]}"
        )
    return table


_build_lock = threading.Lock()


def build_index_table(
    spec: WorkerSpec,
    *,
    cache_dir: Optional[Path] = None,
    method: IndexMethod = "elimination",
    threads: int = 1,
) -> IndexTable:
    """Построить таблицу индексов (или взять из кеша по хешу спецификации)."""
    path = Path(cache_dir) / f"{spec.spec_hash}.json" if cache_dir is not None else None
    if path is not None:
        with _build_lock:
            if path.is_file():
                try:
                    table = load_index_table(path, spec)
                    logger.info("index cache hit %s", path.name)
                    return table
                except (StaleCacheError, KeyError, ValueError) as exc:
                    logger.warning("discarding index cache %s: %s", path.name, exc)

    gittins = gittins_index(spec, method=method, threads=threads)
    strategic = strategic_index(spec, method=method, threads=threads)
    table = IndexTable(
        spec_hash=spec.spec_hash,
        gittins=gittins,
        strategic=strategic,
        thresholds=np.array(promotion_thresholds(spec), dtype=int),
        perpetuity=np.array(perpetuity_values(spec), dtype=float),
        method=method,
        meta={"version": __version__, "states": spec.n_states, "augmented_states": len(strategic)},
    )
    if path is not None:
        with _build_lock:
            ensure_dir(path.parent)
            tmp = path.with_suffix(".json.tmp")
            save_index_table(table, tmp)
            os.replace(tmp, path)
        logger.info("index cache miss, stored %s", path.name)
    return table


@dataclass(frozen=True, slots=True)
class MonotonicityBreak:
    """Пара соседних состояний (x, m), (x_next, m) с Γ^s(x, m) > Γ^s(x_next, m).

    `frozen_below_flow`: x_next — первый порог повышения и π̄(x_next) < π(x).
    При шагах вверх не более чем на клетку только такой разрыв и возможен:
    индекс в x не выше max(π(x), π̄(x_next))/r. Так бывает у верха усечённой
    сетки, где π̄ падает ниже π.
    """

    x: int
    x_next: int
    m: int
    drop: float
    frozen_below_flow: bool


def monotonicity_breaks(spec: WorkerSpec, table: IndexTable, *, tol: float = 1e-9) -> list[MonotonicityBreak]:
    """Разрывы монотонности Γ^s(·, m) по x для каждого m таблицы."""
    by_m: dict[int, list[tuple[int, float]]] = {}
    for (x, m), value in table.strategic.items():
        by_m.setdefault(m, []).append((x, value))
    breaks: list[MonotonicityBreak] = []
    for m, row in sorted(by_m.items()):
        row.sort()
        threshold = int(table.thresholds[m])
        for (x, value), (x_next, value_next) in zip(row, row[1:]):
            drop = value - value_next
            if drop <= tol:
                continue
            frozen = x < threshold <= x_next and float(table.perpetuity[x_next]) < float(spec.pi[x]) - tol
            breaks.append(MonotonicityBreak(x, x_next, m, float(drop), bool(frozen)))
    if breaks:
        logger.debug("strategic index drops at %d adjacent pairs", len(breaks))
    return breaks


def quit_boundary(spec: WorkerSpec, W: float, *, table: Optional[IndexTable] = None) -> int:
    """Наибольшее p с Γ^s(p, p) ≤ W; −1 означает «никогда не выходить»."""
    if W < 0:
        raise ParameterDomainError(f"outside option must be nonnegative, got {W}")
    table = table if table is not None else build_index_table(spec)
    below = [p for p in range(spec.n_states) if table.strategic_at(p, p) <= W]
    return max(below) if below else -1


def lower_envelope(path: Sequence[float] | np.ndarray) -> np.ndarray:
    """Текущий минимум последовательности значений индекса."""
    arr = np.asarray(path, dtype=float)
    if arr.size == 0:
        raise ParameterDomainError("lower envelope of an empty path")
    return np.minimum.accumulate(arr)


__all__ = [
    "FlowChain",
    "AugmentedChain",
    "IndexTable",
    "MonotonicityBreak",
    "monotonicity_breaks",
    "retirement_value",
    "retirement_values",
    "chain_indices",
    "gittins_index",
    "strategic_index",
    "build_index_table",
    "save_index_table",
    "load_index_table",
    "quit_boundary",
    "lower_envelope",
]
