from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Optional

import numpy as np
import yaml

from .engine import ContestConfig
from .exceptions import ConfigError, DiscretizationError, ParameterDomainError, StepSizeError
from .typeproc import (
    TypeChain,
    build_bad_news_belief,
    build_brownian_belief,
    build_ladder_deadend,
    load_chain,
    validate,
)
from .types import AppConfig
from .utils import ensure_dir, fingerprint
from .worker import WorkerSpec


_ENV_MAP: dict[str, str] = {
    "output": "PROMOCONTEST_OUTPUT",
    "cache_dir": "PROMOCONTEST_CACHE_DIR",
    "threads": "PROMOCONTEST_THREADS",
    "replications": "PROMOCONTEST_REPLICATIONS",
    "seed": "PROMOCONTEST_SEED",
    "log_level": "PROMOCONTEST_LOG_LEVEL",
}

_INT_FIELDS = {"threads", "replications", "seed", "trace_sample", "max_product_states", "max_oracle_states"}
_PATH_FIELDS = {"output", "cache_dir", "log_file"}


def _load_yaml(path: Path) -> dict[str, Any]:
    if not path or not path.is_file():
        return {}
    with path.open("r", encoding="utf-8") as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        return {}
    return data


def _normalize_types(updates: dict[str, Any]) -> dict[str, Any]:
    # Строки -> Path для путей, числа из ENV -> int
    out: dict[str, Any] = dict(updates)
    for key in _PATH_FIELDS:
        if key in out and isinstance(out[key], str):
            out[key] = Path(out[key]).expanduser()
    for key in _INT_FIELDS:
        if key in out and out[key] is not None:
            try:
                out[key] = int(out[key])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"setting {key!r} must be an integer, got {out[key]!r}", original=exc) from exc
    return out


def _apply_file_overrides(base: AppConfig, cfg_dict: dict[str, Any]) -> AppConfig:
    if not cfg_dict:
        return base
    updates: dict[str, Any] = {}
    for key in asdict(base).keys():
        if key in cfg_dict and cfg_dict[key] is not None:
            updates[key] = cfg_dict[key]
    return replace(base, **_normalize_types(updates))


def _apply_env_overrides(base: AppConfig) -> AppConfig:
    updates: dict[str, Any] = {}
    for name, env_name in _ENV_MAP.items():
        if env_name not in os.environ:
            continue
        raw = os.environ[env_name]
        if name in _INT_FIELDS:
            try:
                updates[name] = int(raw)
            except ValueError:
                continue
        else:
            updates[name] = raw
    if not updates:
        return base
    return replace(base, **_normalize_types(updates))


def _normalize_and_prepare(cfg: AppConfig) -> AppConfig:
    # Абсолютные пути; каталоги создаются, когда команда что-то пишет
    def absolute(p: Path) -> Path:
        p = Path(p).expanduser()
        return p if p.is_absolute() else Path.cwd() / p

    log_file = absolute(cfg.log_file) if cfg.log_file is not None else None
    if cfg.threads < 1:
        raise ConfigError(f"threads must be at least 1, got {cfg.threads}")
    return replace(cfg, output=absolute(cfg.output), cache_dir=absolute(cfg.cache_dir), log_file=log_file)


def load_config(config_path: Optional[Path] = None) -> AppConfig:
    """Загрузить конфигурацию из файла/ENV и вернуть объект AppConfig.

    Приоритет источников: CLI (накладывается отдельно) > ENV > файл > дефолты.
    Поиск файла: указанная `config_path` -> переменная PROMOCONTEST_CONFIG -> `./promocontest.config.yaml`.
    """
    base = AppConfig()

    if config_path is None:
        env_cfg = os.environ.get("PROMOCONTEST_CONFIG")
        if env_cfg:
            config_path = Path(env_cfg)
        else:
            config_path = Path.cwd() / "promocontest.config.yaml"

    file_data = _load_yaml(config_path)
    cfg = _apply_file_overrides(base, file_data)
    cfg = _apply_env_overrides(cfg)
    return _normalize_and_prepare(cfg)


def merge_cli_overrides(cfg: AppConfig, overrides: dict) -> AppConfig:
    """Наложить значения из CLI (overrides) поверх существующего конфига и вернуть копию.

    Пример overrides: {"seed": 7, "threads": 8}
    """
    if not overrides:
        return cfg
    norm = _normalize_types({k: v for k, v in overrides.items() if v is not None})
    return _normalize_and_prepare(replace(cfg, **norm))


# ---------------------------------------------------------------------------
# Документ экземпляра конкурса
# ---------------------------------------------------------------------------


@dataclass
class Instance:
    """Разобранный документ экземпляра: конфиг конкурса и параметры экспериментов."""

    config: ContestConfig
    config_hash: str
    source: Optional[Path] = None
    experiment: dict[str, Any] = field(default_factory=dict)
    document: dict[str, Any] = field(default_factory=dict)


def _values_on_grid(raw: Any, grid: np.ndarray, what: str) -> np.ndarray:
    if isinstance(raw, (int, float)):
        return np.full(grid.size, float(raw))
    if isinstance(raw, list):
        return np.asarray(raw, dtype=float)
    if isinstance(raw, Mapping):
        if "constant" in raw:
            return np.full(grid.size, float(raw["constant"]))
        if "affine" in raw:
            coef = raw["affine"]
            if isinstance(coef, Mapping):
                intercept, slope = float(coef.get("intercept", 0.0)), float(coef.get("slope", 1.0))
            else:
                intercept, slope = (float(v) for v in coef)
            return intercept + slope * grid
    raise ConfigError(f"{what} must be a number, a list, {{constant: v}} or {{affine: [a, b]}}; got {raw!r}")


def _build_chain(raw: Mapping[str, Any], step: Optional[float], base_dir: Path) -> tuple[TypeChain, Optional[int]]:
    if "file" in raw:
        path = Path(raw["file"])
        if not path.is_absolute():
            path = base_dir / path
        if not path.is_file():
            raise ConfigError(f"chain file not found: {path}")
        return load_chain(path), None
    generator = raw.get("generator")
    if generator is None:
        return TypeChain.from_dict(raw), None
    delta = float(raw.get("delta", step if step is not None else 0.0))
    points = int(raw.get("grid_points", 0))
    if generator == "brownian":
        p0 = float(raw["p0"])
        chain = build_brownian_belief(p0, float(raw["snr"]), points, delta)
        return chain, chain.nearest_state(p0)
    if generator == "bad_news":
        return build_bad_news_belief(float(raw["p0"]), float(raw["lam"]), points, delta), 1
    if generator == "ladder":
        chain = build_ladder_deadend(float(raw["mu"]), float(raw["lam"]), float(raw["x_max"]), points, delta)
        return chain, chain.nearest_state(float(raw.get("x0", 0.0)))
    raise ConfigError(f"unknown chain generator {generator!r}; expected brownian, bad_news or ladder")


def _build_worker(raw: Mapping[str, Any], defaults: Mapping[str, Any], k: int, base_dir: Path) -> WorkerSpec:
    merged = {**defaults, **raw}
    if "chain" not in merged:
        raise ConfigError(f"worker {k}: missing 'chain'")
    chain, initial = _build_chain(merged["chain"], merged.get("step"), base_dir)
    violations = validate(chain)
    if violations:
        details = "; ".join(f"{v.rule}{list(v.states)}: {v.detail}" for v in violations[:10])
        raise ConfigError(f"worker {k}: chain failed validation: {details}")
    if "discount" not in merged:
        raise ConfigError(f"worker {k}: missing 'discount'")
    return WorkerSpec(
        chain=chain,
        pi=_values_on_grid(merged.get("pi", {"affine": [0.0, 1.0]}), chain.grid, f"worker {k} pi"),
        cost=_values_on_grid(merged.get("cost", 0.0), chain.grid, f"worker {k} cost"),
        prize=float(merged.get("prize", 1.0)),
        discount=float(merged["discount"]),
        initial=int(merged.get("initial", initial if initial is not None else 0)),
        name=str(merged.get("name", f"worker{k}")),
    )


def parse_instance(document: Mapping[str, Any], *, base_dir: Optional[Path] = None, source: Optional[Path] = None) -> Instance:
    """Собрать ContestConfig из документа; ошибки домена превращаются в ConfigError."""
    if not isinstance(document, Mapping):
        raise ConfigError("instance document must be a mapping")
    base_dir = base_dir or Path.cwd()
    workers_raw = document.get("workers")
    if not isinstance(workers_raw, list) or not workers_raw:
        raise ConfigError("instance document needs a non-empty 'workers' list")
    defaults = dict(document.get("defaults", {}) or {})
    for key in ("discount", "step"):
        if key in document:
            defaults.setdefault(key, document[key])
    try:
        workers = tuple(_build_worker(w, defaults, k, base_dir) for k, w in enumerate(workers_raw))
        priority = document.get("priority")
        config = ContestConfig(
            workers=workers,
            outside_option=float(document.get("outside_option", 0.0)),
            priority=tuple(int(p) for p in priority) if priority is not None else None,
            horizon_cap=float(document["horizon_cap"]) if document.get("horizon_cap") is not None else None,
            replications=int(document.get("replications", 0)),
            seed=int(document.get("seed", 0)),
        )
    except ConfigError:
        raise
    except (DiscretizationError, StepSizeError, ParameterDomainError) as exc:
        raise ConfigError(f"invalid instance: {exc}", original=exc) from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed instance document: {exc!r}", original=exc) from exc
    return Instance(
        config=config,
        config_hash=fingerprint(document),
        source=source,
        experiment=dict(document.get("experiment", {}) or {}),
        document=dict(document),
    )


def load_instance(path: Path) -> Instance:
    """Прочитать документ экземпляра (YAML или JSON) и собрать конфиг конкурса."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"instance file not found: {path}")
    try:
        with path.open("r", encoding="utf-8") as f:
            document = yaml.safe_load(f)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}", original=exc) from exc
    return parse_instance(document or {}, base_dir=path.parent, source=path)


def prepare_output(cfg: AppConfig, out: Optional[Path]) -> Path:
    target = Path(out).expanduser() if out is not None else cfg.output
    if not target.is_absolute():
        target = Path.cwd() / target
    ensure_dir(target)
    return target
