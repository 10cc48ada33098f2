from __future__ import annotations

import functools
import re
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import typer
from rich.console import Console
from rich.table import Table

from . import __version__
from .config import Instance, load_config, load_instance, merge_cli_overrides, prepare_output
from .engine import (
    IndexContestPolicy,
    build_tables,
    check_ir,
    evaluate_policy,
    simulate_contests,
)
from .exceptions import (
    ConfigError,
    DiscretizationError,
    InstanceTooLargeError,
    ParameterDomainError,
    PromoContestError,
    StepSizeError,
)
from .index import IndexTable, monotonicity_breaks, quit_boundary
from .lab import EXPERIMENTS, run_experiment
from .logging import setup_logging
from .oracle import (
    FAMILY_NAMES,
    bandit_value,
    brute_force_gittins,
    brute_force_single_arm,
    enumerate_feasible_contests,
)
from .types import AppConfig, RunManifest
from .utils import write_csv, write_json
from .worker import single_arm_contract

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VERIFY = 3
EXIT_TOO_LARGE = 4

VERIFY_TOL = 1e-8
Z_BAND = 3.0


_SANITIZE_REPLACEMENTS: tuple[tuple[str, str], ...] = (
    ("✓", "[OK]"),
    ("✗", "[FAIL]"),
    ("⚠", "[WARN]"),
    ("→", "->"),
    ("≤", "<="),
    ("≥", ">="),
    ("Γ", "G"),
)


def _sanitize_console_text(value: object) -> str:
    text = "" if value is None else str(value)
    for source, replacement in _SANITIZE_REPLACEMENTS:
        text = text.replace(source, replacement)
    text = re.sub(r"[═━]+", lambda match: "-" * len(match.group(0)), text)
    return text.replace("—", "-")


def safe_secho(message: object = "", *args: Any, **kwargs: Any) -> None:
    try:
        typer.secho(message, *args, **kwargs)
    except UnicodeEncodeError:
        typer.secho(_sanitize_console_text(message), *args, **kwargs)


def safe_echo(message: object = "", *args: Any, **kwargs: Any) -> None:
    try:
        typer.echo(message, *args, **kwargs)
    except UnicodeEncodeError:
        typer.echo(_sanitize_console_text(message), *args, **kwargs)


def _print_table(table: Table) -> None:
    console = Console(highlight=False)
    try:
        console.print(table)
    except UnicodeEncodeError:
        safe_echo(_sanitize_console_text(table.title or ""))


app = typer.Typer(
    no_args_is_help=True,
    add_completion=False,
    help="Динамические конкурсы на повышение: индексы, симуляция, проверка оракулами, эксперименты",
)


# ---------------------------------------------------------------------------
# Общая подготовка команд
# ---------------------------------------------------------------------------


@dataclass
class _Run:
    cfg: AppConfig
    instance: Optional[Instance]
    out_dir: Path
    manifest: RunManifest
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def manifest_path(self) -> Path:
        return self.out_dir / "manifest.json"

    def write_manifest(self) -> None:
        write_json(self.manifest.to_dict(), self.manifest_path, sync=True)

    def record(self, path: Path) -> Path:
        self.manifest.outputs.append(path.name)
        self.write_manifest()
        return path


def _reconfigure_streams() -> None:
    for stream in (sys.stdout, sys.stderr):
        if hasattr(stream, "reconfigure"):
            try:
                stream.reconfigure(errors="replace")  # type: ignore[call-arg]
            except (AttributeError, TypeError, ValueError, OSError):
                pass


def _start(
    command: str,
    instance_path: Path,
    *,
    out: Optional[Path],
    seed: Optional[int],
    threads: Optional[int],
    replications: Optional[int],
    verbose: bool,
    parameters: Optional[dict[str, Any]] = None,
) -> _Run:
    _reconfigure_streams()
    cfg = load_config()
    cfg = merge_cli_overrides(cfg, {"threads": threads})
    setup_logging(level="DEBUG" if verbose else cfg.log_level, log_file=cfg.log_file)
    instance = load_instance(instance_path)

    # Флаги CLI > документ экземпляра > настройки приложения
    doc = instance.document
    if replications is None:
        replications = int(doc["replications"]) if doc.get("replications") is not None else cfg.replications
    if seed is None:
        seed = int(doc["seed"]) if doc.get("seed") is not None else cfg.seed

    out_dir = prepare_output(cfg, out)
    manifest = RunManifest(
        command=command,
        config_path=instance.source,
        config_hash=instance.config_hash,
        seed=seed,
        version=__version__,
        started_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
        parameters={"replications": replications, "threads": cfg.threads, **(parameters or {})},
    )
    run = _Run(cfg=cfg, instance=instance, out_dir=out_dir, manifest=manifest)
    run.extra.update(seed=seed, replications=replications)
    run.write_manifest()
    return run


def _fail(message: str, code: int) -> None:
    safe_secho(f"✗ {message}", fg=typer.colors.RED, err=True)
    raise typer.Exit(code=code)


def _guarded(fn):
    """Отобразить исключения библиотеки в коды выхода CLI."""

    @functools.wraps(fn)
    def wrapper(*args: Any, **kwargs: Any) -> None:
        try:
            fn(*args, **kwargs)
        except typer.Exit:
            raise
        except KeyboardInterrupt:
            _fail("Прервано пользователем", 1)
        except (ConfigError, DiscretizationError, StepSizeError, ParameterDomainError) as exc:
            _fail(f"Ошибка конфигурации: {exc}", EXIT_CONFIG)
        except InstanceTooLargeError as exc:
            _fail(f"Экземпляр слишком велик: {exc}", EXIT_TOO_LARGE)
        except PromoContestError as exc:
            _fail(f"Ошибка: {exc}", 1)

    return wrapper


def _tables(run: _Run) -> tuple[IndexTable, ...]:
    assert run.instance is not None
    return build_tables(run.instance.config, cache_dir=run.cfg.cache_dir, threads=run.cfg.threads)


# ---------------------------------------------------------------------------
# index
# ---------------------------------------------------------------------------


@app.command("index")
@_guarded
def cmd_index(
    config: Path = typer.Argument(..., help="Документ экземпляра (YAML/JSON)"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Каталог результатов"),
    threads: Optional[int] = typer.Option(None, "--threads", "-t", help="Число потоков"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Подробные логи (DEBUG)"),
) -> None:
    """Построить (или взять из кеша) таблицы индексов всех работников."""
    run = _start("index", config, out=out, seed=None, threads=threads, replications=None, verbose=verbose)
    assert run.instance is not None
    cfg = run.instance.config
    tables = _tables(run)

    write_json([t.to_dict() for t in tables], run.record(run.out_dir / "index_tables.json"))
    rows = [{"worker": i, **row} for i, t in enumerate(tables) for row in t.rows()]
    write_csv(
        rows,
        run.record(run.out_dir / "index.csv"),
        columns=("worker", "x", "m", "gittins", "strategic", "threshold", "perpetuity"),
        kind="index",
    )

    table = Table(title="Индексы работников")
    for col in ("работник", "состояний", "Γ^g(x0)", "Γ^s(x0, x0)", "P̄(x0)", "выход p̲(W)"):
        table.add_column(col)
    for i, (spec, t) in enumerate(zip(cfg.workers, tables)):
        x0 = spec.initial
        table.add_row(
            spec.name or str(i),
            str(spec.n_states),
            f"{t.gittins[x0]:.6g}",
            f"{t.strategic_at(x0, x0):.6g}",
            str(t.threshold(x0)),
            str(quit_boundary(spec, cfg.outside_option, table=t)),
        )
    _print_table(table)
    safe_secho(f"✓ Таблицы записаны в {run.out_dir}", fg=typer.colors.GREEN)


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

_TRACE_COLUMNS = ("replication", "step", "time", "action", "worker", "x_before", "m_before", "x_after", "m_after", "index", "payoff")


def _trace_rows(traces: Sequence[Any]) -> list[dict[str, Any]]:
    rows: list[dict[str, Any]] = []
    for k, trace in enumerate(traces):
        for e in trace.events:
            rows.append(
                {
                    "replication": k,
                    "step": e.step,
                    "time": e.time,
                    "action": e.action,
                    "worker": e.worker,
                    "x_before": e.x_before,
                    "m_before": e.m_before,
                    "x_after": e.x_after,
                    "m_after": e.m_after,
                    "index": e.index,
                }
            )
        rows.append(
            {
                "replication": k,
                "step": trace.steps,
                "time": trace.outcome.time,
                "action": f"summary:{trace.outcome.kind}",
                "worker": trace.outcome.worker,
                "payoff": trace.principal_payoff,
            }
        )
    return rows


@app.command("simulate")
@_guarded
def cmd_simulate(
    config: Path = typer.Argument(..., help="Документ экземпляра (YAML/JSON)"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Каталог результатов"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Зерно генератора"),
    threads: Optional[int] = typer.Option(None, "--threads", "-t", help="Число потоков"),
    replications: Optional[int] = typer.Option(None, "--replications", "-n", help="Число репликаций"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Подробные логи (DEBUG)"),
) -> None:
    """Монте-Карло конкурса по индексному правилу."""
    run = _start("simulate", config, out=out, seed=seed, threads=threads, replications=replications, verbose=verbose)
    assert run.instance is not None
    tables = _tables(run)
    summary = simulate_contests(
        run.instance.config,
        tables=tables,
        replications=run.extra["replications"],
        seed=run.extra["seed"],
        threads=run.cfg.threads,
        keep_traces=run.cfg.trace_sample,
    )
    payload = {"config_hash": run.instance.config_hash, "seed": run.extra["seed"], **summary.to_dict()}
    write_json(payload, run.record(run.out_dir / "summary.json"))
    write_csv(_trace_rows(summary.traces), run.record(run.out_dir / "traces.csv"), columns=_TRACE_COLUMNS, kind="traces")

    table = Table(title=f"Симуляция: {summary.replications} репликаций")
    table.add_column("величина")
    table.add_column("среднее")
    table.add_column("ст. ошибка")
    table.add_row("принципал", f"{payload['principal_payoff']['mean']:.6g}", f"{payload['principal_payoff']['se']:.2g}")
    table.add_row("огибающая", f"{payload['envelope_payoff']['mean']:.6g}", f"{payload['envelope_payoff']['se']:.2g}")
    for share in payload["promotion_shares"]:
        table.add_row(f"доля повышений {share['worker']}", f"{share['share']:.4f}", f"{share['se']:.2g}")
    _print_table(table)
    if summary.capped:
        safe_secho(f"⚠ {summary.capped} конкурсов упёрлись в горизонт", fg=typer.colors.YELLOW)
    safe_secho(f"✓ Результаты записаны в {run.out_dir}", fg=typer.colors.GREEN)


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


@dataclass
class Check:
    name: str
    passed: Optional[bool]
    value: Optional[float] = None
    detail: str = ""

    @property
    def status(self) -> str:
        if self.passed is None:
            return "skipped"
        return "ok" if self.passed else "FAILED"

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "status": self.status, "value": self.value, "detail": self.detail}


def _verification_checks(run: _Run, tables: tuple[IndexTable, ...], family: str) -> list[Check]:
    assert run.instance is not None
    cfg = run.instance.config
    W = cfg.outside_option
    limit = run.cfg.max_oracle_states
    checks: list[Check] = []

    for i, (spec, table) in enumerate(zip(cfg.workers, tables)):
        if spec.n_states <= limit:
            err = max(abs(float(table.gittins[x]) - brute_force_gittins(spec, x, max_states=limit)) for x in range(spec.n_states))
            checks.append(Check(f"gittins_vs_oracle[{i}]", err <= 1e-6, err, "max |Γ^g − перебор|"))
        else:
            checks.append(Check(f"gittins_vs_oracle[{i}]", None, detail=f"сетка {spec.n_states} > {limit}"))
        excess = max(v - float(table.gittins[x]) for (x, _m), v in table.strategic.items())
        checks.append(Check(f"strategic_below_gittins[{i}]", excess <= VERIFY_TOL, excess, "max(Γ^s − Γ^g)"))
        breaks = monotonicity_breaks(spec, table)
        unexplained = [b for b in breaks if not b.frozen_below_flow]
        checks.append(
            Check(
                f"strategic_monotone[{i}]",
                not unexplained,
                max((b.drop for b in breaks), default=0.0),
                f"{len(unexplained)} разрывов по x; {len(breaks) - len(unexplained)} у порога, где π̄(P̄) < π(P̄ − 1)",
            )
        )

        contract = single_arm_contract(spec, W, table=table)
        try:
            oracle = brute_force_single_arm(spec, W)
        except InstanceTooLargeError as exc:
            checks.append(Check(f"single_arm_vs_oracle[{i}]", None, detail=str(exc)))
        else:
            gap = abs(oracle.value - contract.principal_value)
            detail = f"разрыв {gap:.3g}; коридорная структура: {oracle.corridor_structure}"
            passed = gap <= VERIFY_TOL and oracle.corridor_structure
            checks.append(Check(f"single_arm_vs_oracle[{i}]", passed, gap, detail))
        checks.append(
            Check(f"single_arm_ir[{i}]", contract.min_worker_value >= -VERIFY_TOL, contract.min_worker_value, "min ценности работника")
        )

    policy = IndexContestPolicy(tables, W, cfg.priority)
    evaluation = evaluate_policy(cfg, policy, tables=tables, max_states=run.cfg.max_product_states)
    ir = check_ir(cfg, policy, evaluation=evaluation)
    checks.append(Check("contest_ir", ir.passed, ir.min_value, f"{len(ir.negatives)} состояний с отрицательной ценностью"))

    contest, envelope = evaluation.principal_value, evaluation.envelope_value
    diff = abs(contest - envelope)
    checks.append(Check("envelope_identity", diff <= VERIFY_TOL, diff, f"конкурс {contest:.10g}, огибающая {envelope:.10g}"))

    reps = int(run.extra["replications"])
    if reps > 0:
        summary = simulate_contests(cfg, tables=tables, replications=reps, seed=run.extra["seed"], threads=run.cfg.threads)
        mean = float(summary.principal.mean())
        se = float(summary.principal.std(ddof=1) / np.sqrt(reps)) if reps > 1 else 0.0
        z = (mean - contest) / se if se > 0 else (0.0 if abs(mean - contest) <= VERIFY_TOL else float("inf"))
        checks.append(Check("monte_carlo_vs_exact", abs(z) <= Z_BAND, z, f"среднее {mean:.6g} ± {se:.2g}"))
    else:
        checks.append(Check("monte_carlo_vs_exact", None, detail="репликаций 0"))

    if cfg.n_workers == 2:
        enumeration = enumerate_feasible_contests(
            cfg, family, tables=tables, max_states=run.cfg.max_product_states, threads=run.cfg.threads
        )
        write_csv(
            enumeration.rows(),
            run.record(run.out_dir / "family.csv"),
            columns=("policy", "principal_value", "feasible", "min_worker_value"),
            kind="family",
        )
        best = enumeration.best_value
        detail = f"{enumeration.n_feasible}/{enumeration.n_candidates} допустимы, лучший {best:.10g}"
        checks.append(Check("family_upper_bound", best <= envelope + VERIFY_TOL, best - envelope, detail))
    else:
        checks.append(Check("family_upper_bound", None, detail="только для двух работников"))

    if all(float(np.max(np.abs(w.cost))) == 0.0 for w in cfg.workers):
        never = all(int(np.min(t.thresholds[: w.n_states])) > w.n_states - 1 for w, t in zip(cfg.workers, tables))
        checks.append(Check("zero_cost_no_promotion", never, None, "P̄(m) = K+1 для всех m"))
        classic = bandit_value(cfg.workers, W, max_states=run.cfg.max_product_states)
        diff = abs(contest - classic)
        checks.append(Check("zero_cost_classic_value", diff <= VERIFY_TOL, diff, f"классический бандит {classic:.10g}"))
    return checks


@app.command("verify")
@_guarded
def cmd_verify(
    config: Path = typer.Argument(..., help="Документ экземпляра (YAML/JSON)"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Каталог результатов"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Зерно генератора"),
    threads: Optional[int] = typer.Option(None, "--threads", "-t", help="Число потоков"),
    replications: Optional[int] = typer.Option(None, "--replications", "-n", help="Репликаций для сверки с Монте-Карло (0 — пропустить)"),
    family: str = typer.Option("all", "--family", help=f"Семейство конкурсов: {', '.join(FAMILY_NAMES)}"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Подробные логи (DEBUG)"),
) -> None:
    """Сверить индексы, контракт и конкурс с переборными оракулами."""
    if family not in FAMILY_NAMES:
        raise typer.BadParameter(f"ожидается одно из: {', '.join(FAMILY_NAMES)}", param_hint="family")
    run = _start(
        "verify", config, out=out, seed=seed, threads=threads, replications=replications, verbose=verbose,
        parameters={"family": family},
    )
    tables = _tables(run)
    checks = _verification_checks(run, tables, family)

    write_json(
        {"config_hash": run.instance.config_hash if run.instance else None, "checks": [c.to_dict() for c in checks]},
        run.record(run.out_dir / "verify.json"),
    )
    write_csv(
        [c.to_dict() for c in checks], run.record(run.out_dir / "verify.csv"), columns=("name", "status", "value", "detail"), kind="verify"
    )

    table = Table(title="Проверки")
    for col in ("проверка", "статус", "значение", "детали"):
        table.add_column(col)
    for c in checks:
        color = {"ok": "green", "FAILED": "red"}.get(c.status, "yellow")
        table.add_row(c.name, f"[{color}]{c.status}[/{color}]", "" if c.value is None else f"{c.value:.3g}", c.detail)
    _print_table(table)

    failed = [c.name for c in checks if c.passed is False]
    if failed:
        _fail(f"Провалены проверки: {', '.join(failed)}", EXIT_VERIFY)
    safe_secho("✓ Все проверки пройдены", fg=typer.colors.GREEN)


# ---------------------------------------------------------------------------
# experiment
# ---------------------------------------------------------------------------


@app.command("experiment")
@_guarded
def cmd_experiment(
    name: str = typer.Argument(..., help=f"Эксперимент: {', '.join(EXPERIMENTS)}"),
    config: Path = typer.Argument(..., help="Документ экземпляра с блоком experiment:"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Каталог результатов"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Зерно генератора"),
    threads: Optional[int] = typer.Option(None, "--threads", "-t", help="Число потоков"),
    replications: Optional[int] = typer.Option(None, "--replications", "-n", help="Число репликаций"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Подробные логи (DEBUG)"),
) -> None:
    """Запустить эксперимент лаборатории и записать отчёт."""
    if name not in EXPERIMENTS:
        raise typer.BadParameter(f"ожидается одно из: {', '.join(EXPERIMENTS)}", param_hint="name")
    run = _start(
        "experiment", config, out=out, seed=seed, threads=threads, replications=replications, verbose=verbose,
        parameters={"experiment": name},
    )
    assert run.instance is not None
    report = run_experiment(
        name,
        run.instance,
        replications=replications,
        seed=run.extra["seed"],
        threads=run.cfg.threads,
        max_states=run.cfg.max_product_states,
    )
    write_json(report.to_dict(), run.record(run.out_dir / f"{name}.json"))
    write_csv(report.rows(), run.record(run.out_dir / f"{name}.csv"), columns=("experiment", "statistic", "value", "se", "n"), kind="experiment")

    table = Table(title=f"Эксперимент {name}")
    for col in ("статистика", "значение", "ст. ошибка", "n"):
        table.add_column(col)
    for s in report.statistics:
        table.add_row(s.name, f"{s.value:.6g}", f"{s.se:.2g}", str(s.n))
    _print_table(table)
    for claim, ok in report.claims.items():
        safe_secho(f"{'✓' if ok else '⚠'} {claim}", fg=typer.colors.GREEN if ok else typer.colors.YELLOW)
    for note in report.notes:
        safe_echo(f"  {note}")


def main() -> None:
    app()


if __name__ == "__main__":
    main()
