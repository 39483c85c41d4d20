"""CSV tables and JSON sidecars for experiment outputs.

Floats are written with 17 significant digits so that reading a table back
recovers every value bit-for-bit.  Column order is fixed, which together with
seeded runs makes reruns byte-identical.
"""

import csv
import json
import math
import os

import numpy as np

from .experiments import MetricsRecord

__all__ = [
    "SWEEP_COLUMNS",
    "format_value",
    "parse_value",
    "write_csv",
    "read_csv",
    "write_json",
    "save_sweep",
    "metrics_to_row",
    "metrics_from_row",
    "write_metrics_csv",
    "read_metrics_csv",
]

SWEEP_COLUMNS = (
    "scenario", "cell", "repeat", "seed", "n", "epsilon", "m", "dt", "steps", "T",
    "burn_in", "status", "error", "mse_time_avg_per_dim", "mse_total", "component",
    "component_mse", "pathwise_sup", "pathwise_component_sup", "sup_error",
    "p_max_max", "p_min_min", "bound_violations", "lambda_max", "lambda_min",
)


def format_value(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def parse_value(text):
    """Inverse of :func:`format_value` for ints, floats, booleans and strings."""
    if text == "":
        return None
    if text in ("true", "false"):
        return text == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def _columns(rows, preferred):
    keys = set()
    for r in rows:
        keys.update(r)
    cols = [c for c in preferred if c in keys]
    return cols + sorted(keys - set(cols))


def write_csv(path, rows, columns=SWEEP_COLUMNS):
    """Write dict rows; known columns first in ``columns`` order, extras sorted."""
    cols = _columns(rows, columns)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([format_value(r.get(c)) for c in cols])
    return cols


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            {k: parse_value(v) for k, v in r.items()} for r in csv.DictReader(fh)
        ]


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _clean(obj):
    # JSON has no NaN/inf; store them as strings
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def write_json(path, obj):
    text = json.dumps(_clean(json.loads(json.dumps(obj, default=_jsonable))),
                      indent=2, sort_keys=True, allow_nan=False)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text + "\n")


def save_sweep(result, out_dir, stem=None):
    """Write ``<stem>.csv``, ``<stem>.meta.json`` and ``<stem>.summary.json``.

    Returns the three paths.
    """
    os.makedirs(out_dir, exist_ok=True)
    stem = stem or result.scenario
    csv_path = os.path.join(out_dir, f"{stem}.csv")
    meta_path = os.path.join(out_dir, f"{stem}.meta.json")
    summary_path = os.path.join(out_dir, f"{stem}.summary.json")
    write_csv(csv_path, result.rows)
    seeds = sorted({(r["cell"], r["repeat"], r["seed"]) for r in result.rows})
    meta = {
        "scenario": result.scenario,
        "spec": result.spec.to_dict() if result.spec is not None else None,
        "seeds": [{"cell": c, "repeat": j, "seed": s} for c, j, s in seeds],
    }
    write_json(meta_path, meta)
    write_json(summary_path, result.summary)
    return csv_path, meta_path, summary_path


def metrics_to_row(rec):
    row = {
        "run_id": rec.run_id,
        "mse_time_avg_per_dim": rec.mse_time_avg_per_dim,
        "pathwise_sup": rec.pathwise_sup,
        "pathwise_component_sup": rec.pathwise_component_sup,
    }
    for i, v in enumerate(rec.component_mse, start=1):
        row[f"component_mse_{i}"] = float(v)
    for k, v in sorted(rec.diagnostics.items()):
        row[f"diag_{k}"] = v
    return row


def metrics_from_row(row):
    comp = []
    i = 1
    while f"component_mse_{i}" in row:
        comp.append(float(row[f"component_mse_{i}"]))
        i += 1
    run_id = row["run_id"]
    return MetricsRecord(
        run_id="" if run_id is None else str(run_id),
        mse_time_avg_per_dim=float(row["mse_time_avg_per_dim"]),
        component_mse=np.asarray(comp),
        pathwise_sup=float(row["pathwise_sup"]),
        pathwise_component_sup=float(row["pathwise_component_sup"]),
        diagnostics={k[5:]: v for k, v in row.items() if k.startswith("diag_")},
    )


_METRIC_COLUMNS = ("run_id", "mse_time_avg_per_dim", "pathwise_sup", "pathwise_component_sup")


def write_metrics_csv(path, records):
    rows = [metrics_to_row(r) for r in records]
    n = max((len(r.component_mse) for r in records), default=0)
    order = _METRIC_COLUMNS + tuple(f"component_mse_{i}" for i in range(1, n + 1))
    write_csv(path, rows, columns=order)


def read_metrics_csv(path):
    return [metrics_from_row(r) for r in read_csv(path)]
