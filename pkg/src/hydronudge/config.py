"""Run configuration: a sectioned ``key = value`` text format with a fixed schema.

Grammar::

    # comment
    [section]
    key = value        # trailing comments allowed

Every key belongs to a known section; unknown sections or keys, duplicates,
type mismatches and constraint violations are rejected with the line number
and the dotted key name.  ``echo`` writes every key (defaults filled in) in
schema order, so the echo of a parsed config is byte-stable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable

EXPERIMENTS = ("simulate", "assimilate", "sweep", "spectrum", "verify-ops")


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        loc = f"line {line}: " if line is not None else ""
        super().__init__(f"{loc}{message}")
        self.line = line
        self.key = key


def _int(s: str) -> int:
    return int(s, 10)


def _float(s: str) -> float:
    v = float(s)
    if not math.isfinite(v):
        raise ValueError("not finite")
    return v


def _str(s: str) -> str:
    if not s:
        raise ValueError("empty")
    return s


def _floats(s: str) -> tuple[float, ...]:
    return tuple(_float(x.strip()) for x in s.split(",") if x.strip())


def _ints(s: str) -> tuple[int, ...]:
    return tuple(_int(x.strip()) for x in s.split(",") if x.strip())


def _cells_list(s: str) -> tuple[tuple[int, int, int], ...]:
    out = []
    for item in s.split(";"):
        item = item.strip()
        if not item:
            continue
        parts = tuple(_int(p) for p in item.split("x"))
        if len(parts) != 3:
            raise ValueError(f"cell spec {item!r} must look like 4x4x4")
        out.append(parts)
    return tuple(out)


def _fmt(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return "; ".join("x".join(str(c) for c in cell) for cell in v)
        return ", ".join(_fmt(x) for x in v)
    return str(v)


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    check: Callable[[Any], bool] | None = None
    rule: str = ""
    type_name: str = ""


def _pos(v):
    return v > 0


def _nonneg(v):
    return v >= 0


def _choice(*opts):
    return (lambda v: v in opts), "one of " + ", ".join(opts)


_scheme_check, _scheme_rule = _choice("imex", "exponential")
_obs_check, _obs_rule = _choice("cube", "fourier", "identity")
_exp_check, _exp_rule = _choice(*EXPERIMENTS)
_diff_check, _diff_rule = _choice("none", "both")
_field_check, _field_rule = _choice("zero", "taylor-green-layer", "single-mode", "random-smooth", "stokes-mode")

SCHEMA: dict[str, dict[str, Key]] = {
    "experiment": {
        "kind": Key(_str, "assimilate", _exp_check, _exp_rule, "str"),
    },
    "domain": {
        "l": Key(_float, 1.0, _pos, "> 0", "float"),
        "Lx": Key(_float, 2 * math.pi, _pos, "> 0", "float"),
        "Ly": Key(_float, 2 * math.pi, _pos, "> 0", "float"),
        "Nx": Key(_int, 16, lambda v: v >= 4 and v % 2 == 0, "even and >= 4", "int"),
        "Ny": Key(_int, 16, lambda v: v >= 4 and v % 2 == 0, "even and >= 4", "int"),
        "Nz": Key(_int, 17, lambda v: v >= 4, ">= 4", "int"),
        "dealias": Key(_float, 2.0 / 3.0, lambda v: 0 < v <= 1, "in (0, 1]", "float"),
    },
    "stepper": {
        "scheme": Key(_str, "exponential", _scheme_check, _scheme_rule, "str"),
        "dt": Key(_float, 2e-3, _pos, "> 0", "float"),
        "T": Key(_float, 2.0, _pos, "> 0", "float"),
        "output_every": Key(_int, 10, lambda v: v >= 1, ">= 1", "int"),
        "cfl_guard": Key(_float, 0.8, _pos, "> 0", "float"),
        "q": Key(_float, 4.0, lambda v: v >= 1, ">= 1", "float"),
    },
    "nudging": {
        "mu": Key(_float, 50.0, _nonneg, ">= 0 (mu > 0 nudges, mu = 0 is the un-nudged baseline)", "float"),
        "difference_mode": Key(_str, "both", _diff_check, _diff_rule, "str"),
        "fit_start": Key(_float, 0.4, lambda v: 0 <= v < 1, "in [0, 1)", "float"),
    },
    "observation": {
        "kind": Key(_str, "cube", _obs_check, _obs_rule, "str"),
        "cells": Key(_ints, (4, 4, 4), lambda v: len(v) == 3 and min(v) >= 1, "three integers >= 1", "ints"),
        "delta": Key(_float, 0.0, _nonneg, ">= 0 (0 means: use cells / default cutoff)", "float"),
    },
    "forcing": {
        "name": Key(_str, "taylor-green-layer", _field_check, _field_rule, "str"),
        "amplitude": Key(_float, 1.0, None, "", "float"),
        "gamma0": Key(_float, 8.0, _nonneg, ">= 0", "float"),
    },
    "initial": {
        "name": Key(_str, "random-smooth", _field_check, _field_rule, "str"),
        "amplitude": Key(_float, 1.0, None, "", "float"),
        "assimilated": Key(_str, "zero", _field_check, _field_rule, "str"),
    },
    "run": {
        "seed": Key(_int, 7, lambda v: 0 <= v < 2**64, "in [0, 2^64)", "int"),
        "output_dir": Key(str, "", None, "", "str"),
    },
    "sweep": {
        "mu": Key(_floats, (0.0, 5.0, 20.0, 50.0), lambda v: len(v) >= 1 and min(v) >= 0, "non-empty list of values >= 0", "floats"),
        "cells": Key(_cells_list, ((4, 4, 4), (2, 2, 2)), lambda v: len(v) >= 1, "non-empty list like 4x4x4; 2x2x2", "cells"),
        "max_runs": Key(_int, 64, lambda v: v >= 1, ">= 1", "int"),
    },
    "spectrum": {
        "mu": Key(_floats, (0.0, 5.0, 20.0, 80.0), lambda v: len(v) >= 1 and min(v) >= 0, "non-empty list of values >= 0", "floats"),
        "cells": Key(_cells_list, ((4, 4, 4),), lambda v: len(v) >= 1, "non-empty list like 4x4x4; 2x2x2", "cells"),
        "transient": Key(lambda s: {"true": True, "false": False}[s.lower()], True, None, "", "bool"),
    },
}


@dataclass(frozen=True)
class RunConfig:
    values: dict = field(default_factory=dict)

    def __getitem__(self, dotted: str):
        sec, key = dotted.split(".", 1)
        return self.values[sec][key]

    def section(self, name: str) -> dict:
        return self.values[name]

    def replace(self, **dotted) -> "RunConfig":
        """Copy with overrides given as ``section__key=value`` (validated)."""
        vals = {s: dict(v) for s, v in self.values.items()}
        for k, v in dotted.items():
            sec, key = k.split("__", 1)
            spec = SCHEMA[sec][key]
            _validate(spec, v, f"{sec}.{key}", None)
            vals[sec][key] = v
        return RunConfig(vals)

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.values == other.values

    def __hash__(self):
        return hash(echo(self))


def _validate(spec: Key, value, name: str, line: int | None):
    if spec.check is not None and not spec.check(value):
        raise ConfigError(f"{name} = {_fmt(value)} violates constraint: must be {spec.rule}", line, name)


def defaults() -> RunConfig:
    return RunConfig({s: {k: spec.default for k, spec in keys.items()} for s, keys in SCHEMA.items()})


def parse_config(text: str) -> RunConfig:
    vals = {s: {k: spec.default for k, spec in keys.items()} for s, keys in SCHEMA.items()}
    seen: set[str] = set()
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {raw.strip()!r}", lineno)
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]", lineno, section)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = (p.strip() for p in line.split("=", 1))
        if section is None:
            raise ConfigError(f"key {key!r} appears before any [section]", lineno, key)
        name = f"{section}.{key}"
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {name}", lineno, name)
        if name in seen:
            raise ConfigError(f"duplicate key {name}", lineno, name)
        seen.add(name)
        spec = SCHEMA[section][key]
        try:
            parsed = spec.parse(value)
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"{name}: cannot parse {value!r} as {spec.type_name} ({exc})", lineno, name) from None
        _validate(spec, parsed, name, lineno)
        vals[section][key] = parsed
    return RunConfig(vals)


def echo(cfg: RunConfig, include_output: bool = True) -> str:
    lines = []
    for sec, keys in SCHEMA.items():
        lines.append(f"[{sec}]")
        for key in keys:
            if sec == "run" and key == "output_dir" and not include_output:
                continue
            lines.append(f"{key} = {_fmt(cfg.values[sec][key])}")
        lines.append("")
    return "\n".join(lines)
