"""Plain-text experiment configuration: ``key = value`` lines.

``#`` starts a comment, list values are comma separated, and unknown keys
are rejected.  Example::

    scenario = eps-sweep
    epsilon  = 0.0125, 0.025, 0.05, 0.1, 0.2
    n        = 40
    repeats  = 3
"""

import dataclasses

from .exceptions import ConfigError
from .experiments import ExperimentSpec

__all__ = ["parse_config", "parse_config_text", "KEYS"]


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _int(text):
    v = float(text)
    if v != int(v):
        raise ValueError(f"expected an integer, got {text!r}")
    return int(v)


def _list(conv):
    def parse(text):
        items = [s.strip() for s in text.split(",")]
        if any(not s for s in items):
            raise ValueError(f"empty list entry in {text!r}")
        return [conv(s) for s in items]

    return parse


def _str(text):
    return text.strip().strip('"').strip("'")


def _opt_float(text):
    return None if text.strip().lower() in ("", "none", "auto") else float(text)


KEYS = {
    "scenario": _str,
    "epsilon": _list(float),
    "n": _list(_int),
    "T": _list(float),
    "m": _int,
    "dt": float,
    "steps": _int,
    "repeats": _int,
    "base_seed": _int,
    "l": float,
    "output_dir": _str,
    "burn_in": _opt_float,
    "stride": _int,
    "forcing": float,
    "spinup_time": float,
    "component": _int,
    "inflation": _bool,
    "init_spread": float,
    "threads": _int,
}
ALIASES = {"eps": "epsilon", "n_x": "n", "nx": "n", "seed": "base_seed", "M": "m"}

_SCENARIO_ALIASES = {"eps": "eps-sweep", "dim": "dim-sweep", "time": "time-sweep"}


def parse_config_text(text, source="<string>"):
    values = {}
    lines = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", line=lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        key = ALIASES.get(key, key)
        if key not in KEYS:
            raise ConfigError(
                f"unknown key {key!r} (known: {', '.join(sorted(KEYS))})", line=lineno
            )
        if key in values:
            raise ConfigError(f"duplicate key (first set on line {lines[key]})",
                              line=lineno, field=key)
        try:
            values[key] = KEYS[key](value)
        except ValueError as exc:
            raise ConfigError(str(exc), line=lineno, field=key) from None
        lines[key] = lineno

    if "scenario" in values:
        values["scenario"] = _SCENARIO_ALIASES.get(values["scenario"], values["scenario"])
    spec = ExperimentSpec(**values)
    try:
        spec.validate()
    except ConfigError as exc:
        if exc.field in lines and exc.line is None:
            raise ConfigError(exc.message, line=lines[exc.field],
                              field=exc.field) from None
        raise
    return spec


def parse_config(path):
    """Read and validate an experiment config file."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return parse_config_text(text, source=str(path))


def spec_with(spec, **changes):
    """Copy of ``spec`` with ``changes`` applied and re-validated."""
    return dataclasses.replace(spec, **changes).validate()
