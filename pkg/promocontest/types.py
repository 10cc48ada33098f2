from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal, Optional


@dataclass(slots=True)
class AppConfig:
    """Глобальная конфигурация приложения и значения по умолчанию."""

    output: Path = Path("runs")
    cache_dir: Path = Path(".promocontest-cache")
    threads: int = 1
    replications: int = 2000
    seed: int = 0
    # Сколько первых репликаций писать в traces.csv пособытийно
    trace_sample: int = 5
    # Лимиты точных режимов (больше — ошибка размера, код 4)
    max_product_states: int = 200_000
    max_oracle_states: int = 12
    log_level: str = "INFO"
    log_file: Optional[Path] = Path("logs/promocontest.log")


@dataclass(slots=True)
class RunManifest:
    """Манифест запуска: пишется до результатов, по одному на каталог вывода."""

    command: str
    config_path: Optional[Path]
    config_hash: Optional[str]
    seed: Optional[int]
    version: str
    started_at: str
    outputs: list[str] = field(default_factory=list)
    parameters: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "command": self.command,
            "config_path": str(self.config_path) if self.config_path is not None else None,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "version": self.version,
            "started_at": self.started_at,
            "outputs": list(self.outputs),
            "parameters": dict(self.parameters),
        }


OutcomeKind = Literal["promoted", "outside_option", "capped"]


@dataclass(frozen=True, slots=True)
class Outcome:
    """Итог одного конкурса."""

    kind: OutcomeKind
    step: int
    time: float
    worker: Optional[int] = None
    state: Optional[int] = None


@dataclass(frozen=True, slots=True)
class ContestEvent:
    """Одно решение принципала: делегирование шага, повышение или внешний вариант."""

    step: int
    time: float
    action: Literal["delegate", "promote", "outside"]
    worker: Optional[int]
    x_before: Optional[int]
    m_before: Optional[int]
    x_after: Optional[int]
    m_after: Optional[int]
    index: Optional[float]
    envelopes: tuple[float, ...]
    worker_values: Optional[tuple[float, ...]] = None


@dataclass(slots=True)
class ContestTrace:
    """Одна симулированная траектория конкурса с реализованными выплатами."""

    events: list[ContestEvent]
    outcome: Outcome
    principal_payoff: float
    envelope_payoff: float
    worker_payoffs: tuple[float, ...]
    effort_clocks: tuple[float, ...]
    steps: int

    def delegation_order(self) -> list[int]:
        return [e.worker for e in self.events if e.action == "delegate" and e.worker is not None]


@dataclass(frozen=True, slots=True)
class Statistic:
    """Статистика отчёта; у аналитических величин n = 0 и se = 0."""

    name: str
    value: float
    se: float = 0.0
    n: int = 0


@dataclass(slots=True)
class ExperimentReport:
    """Отчёт эксперимента лаборатории: статистики, флаги утверждений, происхождение."""

    experiment: str
    config_hash: Optional[str]
    statistics: list[Statistic] = field(default_factory=list)
    claims: dict[str, bool] = field(default_factory=dict)
    provenance: dict[str, Any] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def add(self, name: str, value: float, se: float = 0.0, n: int = 0) -> Statistic:
        stat = Statistic(name=name, value=float(value), se=float(se), n=int(n))
        self.statistics.append(stat)
        return stat

    def get(self, name: str) -> Statistic:
        for stat in self.statistics:
            if stat.name == name:
                return stat
        raise KeyError(name)

    @property
    def passed(self) -> bool:
        return all(self.claims.values())

    def to_dict(self) -> dict[str, Any]:
        return {
            "experiment": self.experiment,
            "config_hash": self.config_hash,
            "statistics": [
                {"name": s.name, "value": s.value, "se": s.se, "n": s.n} for s in self.statistics
            ],
            "claims": dict(self.claims),
            "provenance": dict(self.provenance),
            "notes": list(self.notes),
        }

    def rows(self) -> list[dict[str, Any]]:
        return [
            {"experiment": self.experiment, "statistic": s.name, "value": s.value, "se": s.se, "n": s.n}
            for s in self.statistics
        ]
