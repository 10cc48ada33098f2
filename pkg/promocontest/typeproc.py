"""Дискретизированные процессы типа работника.

Непрерывные процессы заменяются равномеризованными цепями с шагом Δ:
строка ядра — распределение следующего состояния после Δ единиц усилия.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal, Mapping

import numpy as np

from .exceptions import DiscretizationError, ParameterDomainError, StepSizeError
from .utils import read_json, write_json

JumpSign = Literal["none", "up_only", "down_only"]
Boundary = Literal["absorbing", "reflecting"]

_ROW_TOL = 1e-12
_JUMP_SIGNS = ("none", "up_only", "down_only")
_BOUNDARIES = ("absorbing", "reflecting")


@dataclass(frozen=True)
class TypeChain:
    """Сетка типов x_0 < … < x_K и ядро переходов за шаг Δ.

    Массивы после создания только для чтения; экземпляр можно разделять между потоками.
    """

    grid: np.ndarray
    kernel: np.ndarray
    step: float
    jump_sign: JumpSign = "none"
    boundary: tuple[Boundary, Boundary] = ("absorbing", "absorbing")
    cdf: np.ndarray = field(init=False, repr=False, compare=False)
    last_support: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        grid = np.array(self.grid, dtype=float)
        kernel = np.array(self.kernel, dtype=float)
        if grid.ndim != 1 or grid.size < 2:
            raise ParameterDomainError("grid must be a 1-D sequence with at least two states")
        if kernel.shape != (grid.size, grid.size):
            raise ParameterDomainError(
                f"kernel shape {kernel.shape} does not match grid of {grid.size} states"
            )
        if not (self.step > 0 and math.isfinite(self.step)):
            raise ParameterDomainError(f"step must be positive, got {self.step}")
        if self.jump_sign not in _JUMP_SIGNS:
            raise ParameterDomainError(f"unknown jump_sign {self.jump_sign!r}")
        boundary = tuple(self.boundary)
        if len(boundary) != 2 or any(b not in _BOUNDARIES for b in boundary):
            raise ParameterDomainError(f"boundary must be two of {_BOUNDARIES}, got {self.boundary!r}")
        cdf = np.cumsum(kernel, axis=1)
        # последний узел строки с положительной вероятностью
        last_support = grid.size - 1 - np.argmax(kernel[:, ::-1] > 0.0, axis=1)
        for arr in (grid, kernel, cdf, last_support):
            arr.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "step", float(self.step))
        object.__setattr__(self, "boundary", boundary)
        object.__setattr__(self, "cdf", cdf)
        object.__setattr__(self, "last_support", last_support)

    @property
    def n_states(self) -> int:
        return int(self.grid.size)

    @property
    def top(self) -> int:
        return int(self.grid.size - 1)

    def is_absorbing(self, state: int) -> bool:
        return bool(self.kernel[state, state] >= 1.0 - _ROW_TOL)

    def nearest_state(self, value: float) -> int:
        return int(np.argmin(np.abs(self.grid - float(value))))

    def to_dict(self) -> dict[str, Any]:
        return {
            "grid": [float(v) for v in self.grid],
            "kernel": [[float(v) for v in row] for row in self.kernel],
            "step": float(self.step),
            "jump_sign": self.jump_sign,
            "boundary": list(self.boundary),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TypeChain":
        try:
            return cls(
                grid=np.asarray(data["grid"], dtype=float),
                kernel=np.asarray(data["kernel"], dtype=float),
                step=float(data["step"]),
                jump_sign=data.get("jump_sign", "none"),
                boundary=tuple(data.get("boundary", ("absorbing", "absorbing"))),
            )
        except KeyError as exc:
            raise ParameterDomainError(f"chain document misses field {exc.args[0]!r}", original=exc) from exc


def save_chain(chain: TypeChain, path: Path) -> Path:
    return write_json(chain.to_dict(), path)


def load_chain(path: Path) -> TypeChain:
    return TypeChain.from_dict(read_json(path))


def _check_step(rate_times_step: float, what: str) -> None:
    if rate_times_step >= 1.0:
        raise StepSizeError(f"{what} = {rate_times_step:.6g} per step; reduce delta below 1/rate")


def build_bad_news_belief(p0: float, lam: float, grid_points: int, delta: float) -> TypeChain:
    """Убеждение о хорошем типе при плохих новостях с интенсивностью lam (только у плохого).

    Без новостей убеждение растёт по Байесу: p' = p / (1 − (1−p)·lam·Δ);
    при новости (вероятность (1−p)·lam·Δ) — прыжок в поглощающее 0.
    Сетка: 0 и орбита без новостей, начинающаяся в p0 (индекс 1).
    """
    if not (0.0 < p0 < 1.0):
        raise ParameterDomainError(f"p0 must lie in (0, 1), got {p0}")
    if not lam > 0:
        raise ParameterDomainError(f"lam must be positive, got {lam}")
    if grid_points < 3:
        raise ParameterDomainError(f"grid_points must be at least 3, got {grid_points}")
    if not delta > 0:
        raise ParameterDomainError(f"delta must be positive, got {delta}")
    _check_step(lam * delta, "lam*delta")

    beliefs = [0.0, float(p0)]
    while len(beliefs) < grid_points:
        p = beliefs[-1]
        beliefs.append(p / (1.0 - (1.0 - p) * lam * delta))
    grid = np.asarray(beliefs)
    n = grid.size
    kernel = np.zeros((n, n))
    kernel[0, 0] = 1.0
    kernel[n - 1, n - 1] = 1.0
    for k in range(1, n - 1):
        hazard = (1.0 - grid[k]) * lam * delta
        kernel[k, 0] = hazard
        kernel[k, k + 1] = 1.0 - hazard
    return TypeChain(grid=grid, kernel=kernel, step=delta, jump_sign="down_only", boundary=("absorbing", "absorbing"))


def build_brownian_belief(p0: float, snr: float, grid_points: int, delta: float) -> TypeChain:
    """Рождение–гибель на равномерной сетке [0, 1] для dp = snr·p(1−p)·dB.

    Вверх и вниз с одинаковой вероятностью q = (snr·p(1−p))²·Δ / (2h²): среднее
    сохраняется точно, дисперсия шага совпадает с диффузией. Концы поглощающие.
    p0 служит только для проверки домена; стартовое состояние — ближайший узел.
    """
    if not (0.0 < p0 < 1.0):
        raise ParameterDomainError(f"p0 must lie in (0, 1), got {p0}")
    if not snr > 0:
        raise ParameterDomainError(f"snr must be positive, got {snr}")
    if grid_points < 3:
        raise ParameterDomainError(f"grid_points must be at least 3, got {grid_points}")
    if not delta > 0:
        raise ParameterDomainError(f"delta must be positive, got {delta}")

    grid = np.linspace(0.0, 1.0, grid_points)
    h = grid[1] - grid[0]
    n = grid.size
    kernel = np.zeros((n, n))
    kernel[0, 0] = 1.0
    kernel[n - 1, n - 1] = 1.0
    for k in range(1, n - 1):
        p = grid[k]
        q = (snr * p * (1.0 - p)) ** 2 * delta / (2.0 * h * h)
        if q > 0.5:
            raise DiscretizationError(
                f"grid too coarse at state {k} (p={p:.6g}): move probability {q:.6g} exceeds 1/2; "
                "refine delta or use fewer grid points",
                state=k,
            )
        kernel[k, k - 1] = q
        kernel[k, k + 1] = q
        kernel[k, k] = 1.0 - 2.0 * q
    return TypeChain(grid=grid, kernel=kernel, step=delta, jump_sign="none", boundary=("absorbing", "absorbing"))


def build_ladder_deadend(mu: float, lam: float, x_max: float, grid_points: int, delta: float) -> TypeChain:
    """Лестница с тупиками: подъём на одну клетку с вероятностью mu·Δ/cell, тупик — прыжок в 0.

    Состояние 0 не поглощающее: работник снова начинает подъём.
    """
    if not mu > 0:
        raise ParameterDomainError(f"mu must be positive, got {mu}")
    if lam < 0:
        raise ParameterDomainError(f"lam must be nonnegative, got {lam}")
    if not x_max > 0:
        raise ParameterDomainError(f"x_max must be positive, got {x_max}")
    if grid_points < 3:
        raise ParameterDomainError(f"grid_points must be at least 3, got {grid_points}")
    if not delta > 0:
        raise ParameterDomainError(f"delta must be positive, got {delta}")
    _check_step(lam * delta, "lam*delta")

    grid = np.linspace(0.0, float(x_max), grid_points)
    cell = grid[1] - grid[0]
    up = mu * delta / cell
    if up > 1.0 + 1e-9:
        raise StepSizeError(f"mu*delta/cell = {up:.6g} exceeds one cell per step; reduce delta or refine less")
    up = min(up, 1.0)
    dead = lam * delta
    n = grid.size
    kernel = np.zeros((n, n))
    for k in range(n - 1):
        kernel[k, 0] += dead
        kernel[k, k + 1] += (1.0 - dead) * up
        kernel[k, k] += (1.0 - dead) * (1.0 - up)
    kernel[n - 1, 0] += dead
    kernel[n - 1, n - 1] += 1.0 - dead
    return TypeChain(grid=grid, kernel=kernel, step=delta, jump_sign="down_only", boundary=("reflecting", "reflecting"))


def step(chain: TypeChain, state: int, rng: np.random.Generator) -> int:
    """Сэмплировать следующее состояние из строки ядра (обратная функция распределения)."""
    return step_with_uniform(chain, state, float(rng.random()))


def step_with_uniform(chain: TypeChain, state: int, u: float) -> int:
    """Шаг по заданному равномерному u; общий u для двух цепей даёт монотонное сцепление."""
    if not 0 <= state < chain.n_states:
        raise IndexError(f"state {state} outside 0..{chain.top}")
    nxt = int(np.searchsorted(chain.cdf[state], u, side="right"))
    # сумма строки может округлиться ниже 1: u за её пределом уходит в последний узел носителя
    return min(nxt, int(chain.last_support[state]))


@dataclass(frozen=True, slots=True)
class ChainViolation:
    """Нарушенный инвариант цепи."""

    rule: str
    states: tuple[int, ...]
    detail: str


def validate(chain: TypeChain) -> list[ChainViolation]:
    """Список нарушений: суммы строк, монотонность, jump_sign, достижимость вверх.

    Пустой список — цепь допустима. Нарушения сообщаются, а не бросаются.
    """
    violations: list[ChainViolation] = []
    kernel = chain.kernel
    n = chain.n_states

    if np.any(np.diff(chain.grid) <= 0):
        violations.append(ChainViolation("grid_ascending", (), "grid values must be strictly increasing"))
    negative = np.argwhere(kernel < -_ROW_TOL)
    for i, j in negative:
        violations.append(ChainViolation("nonnegative", (int(i), int(j)), f"kernel[{i}][{j}] = {kernel[i, j]:.3g}"))

    sums = kernel.sum(axis=1)
    for i in np.flatnonzero(np.abs(sums - 1.0) > _ROW_TOL):
        violations.append(ChainViolation("row_sum", (int(i),), f"row {i} sums to {sums[i]:.15g}"))

    # CDF строки x' не выше CDF строки x при x ≤ x'
    cdf = np.cumsum(kernel, axis=1)
    for i in range(n - 1):
        for j in range(i + 1, n):
            if np.any(cdf[j, :-1] > cdf[i, :-1] + 1e-12):
                violations.append(
                    ChainViolation(
                        "monotonicity",
                        (i, j),
                        f"successor law of state {j} does not dominate that of state {i}",
                    )
                )

    for i in range(n):
        targets = np.flatnonzero(kernel[i] > 0)
        ups = targets[targets > i + 1]
        downs = targets[targets < i - 1]
        if chain.jump_sign in ("none", "down_only") and ups.size:
            violations.append(
                ChainViolation("jump_sign", (i, int(ups[0])), f"state {i} skips upward to {int(ups[0])}")
            )
        if chain.jump_sign in ("none", "up_only") and downs.size:
            violations.append(
                ChainViolation("jump_sign", (i, int(downs[0])), f"state {i} skips downward to {int(downs[0])}")
            )

    for end, state in (("bottom", 0), ("top", n - 1)):
        flag = chain.boundary[0 if end == "bottom" else 1]
        if flag == "absorbing" and not chain.is_absorbing(state):
            violations.append(ChainViolation("boundary", (state,), f"{end} declared absorbing but leaks"))

    # освобождена только объявленная поглощающей нижняя граница
    for i in range(n - 1):
        if i == 0 and chain.boundary[0] == "absorbing":
            continue
        if kernel[i, i + 1:].sum() <= 0:
            violations.append(ChainViolation("upward_reachability", (i,), f"state {i} cannot move up"))

    return violations


__all__ = [
    "TypeChain",
    "ChainViolation",
    "build_bad_news_belief",
    "build_brownian_belief",
    "build_ladder_deadend",
    "step",
    "step_with_uniform",
    "validate",
    "save_chain",
    "load_chain",
]
