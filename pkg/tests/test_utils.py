from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from promocontest.utils import (
    canonical_json,
    fingerprint,
    mean_and_se,
    read_csv,
    read_json,
    spawn_generators,
    write_csv,
    write_json,
)


def test_canonical_json_is_order_independent():
    assert canonical_json({"b": 1, "a": [1.5, 2]}) == '{"a":[1.5,2],"b":1}'
    assert fingerprint({"b": 1, "a": 2}) == fingerprint({"a": 2, "b": 1})
    assert fingerprint({"a": 0.1}) != fingerprint({"a": 0.1000000001})


def test_json_cleans_numpy_and_nonfinite(tmp_path: Path):
    path = write_json({"x": np.float64(0.25), "n": np.int64(3), "v": np.arange(2), "bad": math.inf}, tmp_path / "a" / "out.json", sync=True)
    data = read_json(path)
    assert data == {"x": 0.25, "n": 3, "v": [0, 1], "bad": "inf"}
    # float через repr не теряет битов
    value = 0.1 + 0.2
    write_json({"v": value}, tmp_path / "b.json")
    assert json.loads((tmp_path / "b.json").read_text(encoding="utf-8"))["v"] == value


def test_csv_has_versioned_header(tmp_path: Path):
    rows = [{"state": 0, "value": 1.0 / 3.0, "extra": "ignored"}, {"state": 1, "value": None}]
    path = write_csv(rows, tmp_path / "t.csv", columns=["state", "value"], kind="index")
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "# promocontest index v1"
    assert lines[1] == "state,value"
    parsed = read_csv(path)
    assert float(parsed[0]["value"]) == 1.0 / 3.0
    assert parsed[1]["value"] == ""
    assert "extra" not in parsed[0]


def test_spawned_streams_depend_only_on_seed_and_position():
    a = [g.random() for g in spawn_generators(7, 4)]
    b = [g.random() for g in spawn_generators(7, 6)[:4]]
    assert a == b
    assert len(set(a)) == 4


def test_mean_and_se():
    mean, se = mean_and_se([1.0, 2.0, 3.0])
    assert mean == 2.0
    assert se == np.std([1.0, 2.0, 3.0], ddof=1) / math.sqrt(3)
    assert mean_and_se([4.0]) == (4.0, 0.0)
    empty_mean, empty_se = mean_and_se([])
    assert math.isnan(empty_mean) and math.isnan(empty_se)
