import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lenkbf.experiments import ExperimentSpec, MetricsRecord, SweepResult
from lenkbf.persistence import (
    SWEEP_COLUMNS,
    format_value,
    parse_value,
    read_csv,
    read_metrics_csv,
    save_sweep,
    write_csv,
    write_json,
    write_metrics_csv,
)


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_round_trip(x):
    assert parse_value(format_value(x)) == x


@pytest.mark.parametrize("v,text", [
    (True, "true"), (np.bool_(False), "false"), (3, "3"), (np.int64(-7), "-7"),
    (0.1, "0.10000000000000001"), (None, ""), ("ok", "ok"),
])
def test_format(v, text):
    assert format_value(v) == text


def test_csv_column_order(tmp_path):
    p = tmp_path / "t.csv"
    cols = write_csv(p, [{"zeta": 1, "epsilon": 0.1, "cell": 0, "alpha": 2}])
    assert cols == ["cell", "epsilon", "alpha", "zeta"]
    assert p.read_text().splitlines()[0] == "cell,epsilon,alpha,zeta"
    assert b"\r" not in p.read_bytes()


def test_csv_round_trip(tmp_path):
    rows = [{"cell": 0, "epsilon": 1 / 3, "status": "ok", "error": "", "mse_total": math.pi}]
    p = tmp_path / "t.csv"
    write_csv(p, rows)
    back = read_csv(p)[0]
    assert back["epsilon"] == 1 / 3
    assert back["mse_total"] == math.pi
    assert back["error"] is None


def test_metrics_round_trip_exact(tmp_path):
    rng = np.random.default_rng(0)
    recs = [
        MetricsRecord(f"{k}:0", float(rng.random()), rng.random(5), float(rng.random()),
                      float(rng.random()), {"p_max_max": float(rng.random()),
                                            "bound_violations": 0})
        for k in range(3)
    ]
    p = tmp_path / "m.csv"
    write_metrics_csv(p, recs)
    back = read_metrics_csv(p)
    for a, b in zip(recs, back):
        assert a.run_id == b.run_id
        assert a.mse_time_avg_per_dim == b.mse_time_avg_per_dim
        assert np.array_equal(a.component_mse, b.component_mse)
        assert (a.pathwise_sup, a.pathwise_component_sup) == (b.pathwise_sup,
                                                              b.pathwise_component_sup)
        assert a.diagnostics == b.diagnostics


def test_json_nan_and_sorting(tmp_path):
    p = tmp_path / "s.json"
    write_json(p, {"b": float("nan"), "a": np.float64(1.5), "c": np.arange(2)})
    text = p.read_text()
    assert text.index('"a"') < text.index('"b"')
    assert json.loads(text) == {"a": 1.5, "b": "nan", "c": [0, 1]}


def test_save_sweep(tmp_path):
    rows = [{"scenario": "single", "cell": 0, "repeat": j, "seed": 10 + j, "status": "ok"}
            for j in range(2)]
    res = SweepResult("single", rows, {"slope": float("nan")}, ExperimentSpec())
    paths = save_sweep(res, tmp_path / "out")
    meta = json.loads(open(paths[1]).read())
    assert meta["seeds"] == [{"cell": 0, "repeat": 0, "seed": 10},
                             {"cell": 0, "repeat": 1, "seed": 11}]
    assert meta["spec"]["scenario"] == "single"
    assert open(paths[0]).readline().strip() == "scenario,cell,repeat,seed,status"
    assert set(SWEEP_COLUMNS) >= {"scenario", "cell", "seed"}
