from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np


CSV_SCHEMA_VERSION = 1


def ensure_dir(path: Path) -> None:
    """Гарантировать существование каталога (idempotent)."""
    Path(path).mkdir(parents=True, exist_ok=True)


def _clean_for_json(obj: Any) -> Any:
    """Рекурсивно привести объект к JSON-совместимому виду.

    numpy-скаляры и массивы превращаются в обычные float/int/list, Path — в строку.
    Нечисловые float (inf/nan) сохраняются строками, чтобы JSON оставался валидным.
    """
    if isinstance(obj, Mapping):
        return {str(k): _clean_for_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean_for_json(item) for item in obj]
    if isinstance(obj, np.ndarray):
        return [_clean_for_json(item) for item in obj.tolist()]
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        if math.isfinite(value):
            return value
        return str(value)
    if isinstance(obj, (str, int, bool, type(None))):
        return obj
    if isinstance(obj, Path):
        return str(obj)
    return str(obj)


def canonical_json(obj: Any) -> str:
    """Каноническая JSON-строка: сортированные ключи, без пробелов, repr для float.

    repr double в Python round-trip точен, поэтому запись/чтение не меняет биты.
    """
    return json.dumps(_clean_for_json(obj), sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def fingerprint(obj: Any) -> str:
    """sha256 канонического JSON-представления."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def file_hash(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_json(obj: Any, path: Path, *, sync: bool = False) -> Path:
    """Записать JSON (UTF-8, отступы, сортированные ключи).

    sync=True делает fsync — для манифестов запуска.
    """
    path = Path(path)
    ensure_dir(path.parent)
    text = json.dumps(_clean_for_json(obj), sort_keys=True, indent=2, ensure_ascii=False)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text + "\n")
        if sync:
            f.flush()
            os.fsync(f.fileno())
    return path


def read_json(path: Path) -> Any:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def write_csv(
    rows: Iterable[Mapping[str, Any]],
    path: Path,
    *,
    columns: Sequence[str],
    kind: str,
) -> Path:
    """Записать CSV с версионированной строкой-комментарием в начале.

    Первая строка: `# promocontest <kind> v<версия>`; потребители должны
    терпимо относиться к добавленным колонкам.
    """
    path = Path(path)
    ensure_dir(path.parent)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(f"# promocontest {kind} v{CSV_SCHEMA_VERSION}\n")
        writer = csv.DictWriter(f, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _csv_cell(row.get(k)) for k in columns})
    return path


def _csv_cell(value: Any) -> Any:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (np.integer, np.bool_)):
        return value.item()
    return value


def read_csv(path: Path) -> list[dict[str, str]]:
    """Прочитать CSV, записанный write_csv (строки-комментарии пропускаются)."""
    with open(path, "r", encoding="utf-8", newline="") as f:
        lines = [line for line in f if not line.startswith("#")]
    return list(csv.DictReader(lines))


def spawn_generators(seed: int, count: int) -> list[np.random.Generator]:
    """Независимые потоки случайных чисел, заранее привязанные к номеру блока.

    Поток i зависит только от (seed, i), а не от числа потоков выполнения.
    """
    children = np.random.SeedSequence(int(seed)).spawn(int(count))
    return [np.random.Generator(np.random.PCG64(child)) for child in children]


def mean_and_se(values: Sequence[float] | np.ndarray) -> tuple[float, float]:
    """Выборочное среднее и стандартная ошибка (0 для n < 2)."""
    arr = np.asarray(values, dtype=float)
    n = arr.size
    if n == 0:
        return float("nan"), float("nan")
    mean = float(arr.mean())
    if n < 2:
        return mean, 0.0
    return mean, float(arr.std(ddof=1) / math.sqrt(n))
