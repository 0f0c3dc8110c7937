"""Flat dotted-key configuration for scenario runs.

Config files are plain text, one `key = value` per line, `#` comments.
Keys are validated against a fixed schema: unknown keys are rejected
with a nearest-match suggestion, and out-of-range values name the key
and the accepted range.  Serialization prints floats with 17
significant digits so parse -> serialize -> parse is a fixed point.
"""

from __future__ import annotations

import difflib
import math
from dataclasses import dataclass, field

__all__ = ["ScenarioConfig", "ConfigError", "parse_config",
           "parse_config_text", "serialize_config", "default_config",
           "SCENARIOS", "SCHEMA"]

SCENARIOS = ("verify", "bubble", "run", "decompose", "sweep", "tensor")


class ConfigError(ValueError):
    """Raised for parse, unknown-key, or out-of-range errors."""


def _positive(v):
    return v > 0


def _nonneg(v):
    return v >= 0


@dataclass(frozen=True)
class _Key:
    typ: type
    default: object
    check: object = None
    range_text: str = ""


# schema: every accepted key, its type, default, and range
SCHEMA = {
    "scenario": _Key(str, "run", lambda v: v in SCENARIOS,
                     "one of " + "|".join(SCENARIOS)),
    "out": _Key(str, "out", None, ""),
    "seed": _Key(int, 0, _nonneg, ">= 0"),
    "n": _Key(int, 5, lambda v: v >= 5, ">= 5 (the quartic-operator "
              "formulas degenerate below 5)"),
    # flow
    "flow.K": _Key(int, 48, lambda v: 8 <= v <= 4096, "in [8, 4096]"),
    "flow.t_end": _Key(float, 10.0, _positive, "> 0"),
    "flow.dt0": _Key(float, 1e-3, _positive, "> 0"),
    "flow.dt_max": _Key(float, 1e-3, _positive, "> 0"),
    "flow.e_drift_tol": _Key(float, 1e-9, _positive, "> 0"),
    "flow.stop_tol": _Key(float, 1e-10, _positive, "> 0"),
    "flow.preset": _Key(str, "constant",
                        lambda v: v in ("constant", "perturbed"),
                        "one of constant|perturbed"),
    "flow.amplitude": _Key(float, 0.1, lambda v: abs(v) < 1.0,
                           "|amplitude| < 1"),
    "flow.degree": _Key(int, 2, lambda v: 1 <= v <= 16, "in [1, 16]"),
    # bubble / test-function scenario
    "epsilon": _Key(float, 0.05, _positive, "> 0"),
    "delta": _Key(float, 0.2, _positive, "> 0"),
    "bubble.h": _Key(float, 1e-2, _positive, "> 0"),
    "bubble.rmax": _Key(float, 10.0, _positive, "> 0"),
    "bubble.H": _Key(str, "", None, "path to a tensor coefficient file"),
    "bubble.split_nr": _Key(int, 4, lambda v: 2 <= v <= 16, "in [2, 16]"),
    "bubble.split_deg": _Key(int, 2, lambda v: 1 <= v <= 8, "in [1, 8]"),
    "greens.M": _Key(int, 24, lambda v: 4 <= v <= 64, "in [4, 64]"),
    "greens.K": _Key(int, 256, lambda v: 16 <= v <= 2048, "in [16, 2048]"),
    # decomposition
    "decompose.m": _Key(int, 1, _nonneg, ">= 0"),
    "decompose.K": _Key(int, 256, lambda v: 8 <= v <= 4096, "in [8, 4096]"),
    "decompose.state": _Key(str, "", None, "path to a state file"),
    "decompose.uinf": _Key(str, "", None, "path to a state file or empty"),
    "decompose.count": _Key(int, 8, _positive, "> 0"),
    "decompose.budget": _Key(int, 2000, _positive, "> 0"),
    # sweep
    "sweep.epsilons": _Key(str, "0.04,0.02,0.01", None,
                           "comma-separated positive reals"),
    # tensor generation
    "tensor.degree": _Key(int, 2, lambda v: v >= 2, ">= 2"),
    "tensor.seed": _Key(int, 0, _nonneg, ">= 0"),
    # verify
    "verify.level": _Key(str, "fast", lambda v: v in ("fast", "full"),
                         "one of fast|full"),
    "verify.tol": _Key(float, 1e-4, _positive, "> 0"),
}


@dataclass
class ScenarioConfig:
    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        if key not in SCHEMA:
            raise KeyError(key)
        return self.values.get(key, SCHEMA[key].default)

    @property
    def scenario(self) -> str:
        return self["scenario"]

    def with_overrides(self, **kv) -> "ScenarioConfig":
        out = dict(self.values)
        for k, v in kv.items():
            if v is not None:
                out[k] = _validate(k, v)
        return ScenarioConfig(out)


def _suggest(key: str) -> str:
    close = difflib.get_close_matches(key, SCHEMA.keys(), n=1, cutoff=0.5)
    return f"; did you mean '{close[0]}'?" if close else ""


def _validate(key: str, value):
    if key not in SCHEMA:
        raise ConfigError(f"unknown key '{key}'{_suggest(key)}")
    spec = SCHEMA[key]
    if spec.typ is int and isinstance(value, str):
        try:
            value = int(value)
        except ValueError:
            raise ConfigError(f"key '{key}': expected integer, got "
                              f"'{value}'") from None
    elif spec.typ is float and isinstance(value, str):
        try:
            value = float(value)
        except ValueError:
            raise ConfigError(f"key '{key}': expected real number, got "
                              f"'{value}'") from None
    if spec.typ is float and isinstance(value, int):
        value = float(value)
    if not isinstance(value, spec.typ):
        raise ConfigError(f"key '{key}': expected {spec.typ.__name__}")
    if spec.typ is float and not math.isfinite(value):
        raise ConfigError(f"key '{key}': value must be finite")
    if spec.check is not None and not spec.check(value):
        raise ConfigError(f"key '{key}': value {value!r} out of range; "
                          f"accepted: {spec.range_text}")
    return value


def parse_config_text(text: str) -> ScenarioConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', "
                              f"got '{raw.strip()}'")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        try:
            values[key] = _validate(key, val)
        except ConfigError as e:
            raise ConfigError(f"line {lineno}: {e}") from None
    return ScenarioConfig(values)


def parse_config(path: str) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def _format_value(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def serialize_config(cfg: ScenarioConfig, include_defaults: bool = True
                     ) -> str:
    lines = []
    keys = sorted(SCHEMA) if include_defaults else sorted(cfg.values)
    for k in keys:
        lines.append(f"{k} = {_format_value(cfg[k])}")
    return "\n".join(lines) + "\n"


def default_config(scenario: str = "run") -> ScenarioConfig:
    return ScenarioConfig({"scenario": _validate("scenario", scenario)})
