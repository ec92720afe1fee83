"""Scenario configuration: YAML with an explicit unit on every physical value.

    trap:
      I_c: 13 mA
      B_z0: 1.8 G
      f_mod: 30 kHz

A bare number where a physical quantity is expected is rejected.
"""
from __future__ import annotations

import copy
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import yaml


class ConfigError(ValueError):
    pass


_UNITS = {
    "length": {"m": 1.0, "mm": 1e-3, "um": 1e-6, "µm": 1e-6, "nm": 1e-9},
    "current": {"A": 1.0, "mA": 1e-3, "uA": 1e-6},
    "field": {"T": 1.0, "mT": 1e-3, "uT": 1e-6, "G": 1e-4, "mG": 1e-7},
    "temperature": {"K": 1.0, "mK": 1e-3, "uK": 1e-6, "µK": 1e-6, "nK": 1e-9},
    "frequency": {"Hz": 1.0, "kHz": 1e3, "MHz": 1e6},
    "time": {"s": 1.0, "ms": 1e-3, "us": 1e-6, "µs": 1e-6},
}

_QTY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([A-Za-zµ]+)\s*$")

# (section, key) -> dimension, or None for dimensionless entries
SCHEMA = {
    "scenario": {"kind": None, "seed": None, "out": None, "workers": None},
    "trap": {"I_c": "current", "I_b": "current", "I_h": "current", "B_z0": "field",
             "stray_x": "field", "stray_y": "field", "f_mod": "frequency", "h_model": None},
    "roughness": {"target_rms": "temperature", "realizations": None, "z_extent": "length",
                  "dz": "length", "edge_rms": "length", "height": "length"},
    "ensemble": {"N": None, "temperature": "temperature", "Z1": "length"},
    "integrator": {"dt": "time", "t_max": "time", "sample_interval": "time"},
    "analysis": {"pixel": "length", "resolution_rms": "length", "tof": "time", "chain": None,
                 "noise_floor": "temperature"},
    "study": {"scales": None, "realizations": None, "base_rms": "temperature",
              "z_extent": "length"},
    "lifetime": {"frequencies": "frequency", "t_max": "time", "N": None,
                 "stray": "field"},
}

DEFAULTS = {
    "scenario": {"kind": "ac", "seed": None, "out": "runs", "workers": 1},
    "trap": {"I_c": "13 mA", "I_b": "15 mA", "I_h": "0.4 A", "B_z0": "1.8 G", "stray_x": "0 G",
             "stray_y": "0 G", "f_mod": "30 kHz", "h_model": "harmonic"},
    "roughness": {"target_rms": "30 nK", "realizations": 1, "z_extent": "2 mm", "dz": "0.5 um",
                  "edge_rms": "1 nm", "height": "7 um"},
    "ensemble": {"N": 2000, "temperature": "280 nK", "Z1": "20 um"},
    "integrator": {"dt": "20 us", "t_max": "2 s", "sample_interval": "1 ms"},
    "analysis": {"pixel": "6 um", "resolution_rms": "8 um", "tof": "1.5 ms", "chain": "folded",
                 "noise_floor": "0 nK"},
    "study": {"scales": [1.0, 0.0714285714285714], "realizations": 5, "base_rms": "80 nK",
              "z_extent": "4 mm"},
    "lifetime": {"frequencies": ["5 kHz", "8 kHz", "10 kHz", "15 kHz", "20 kHz", "30 kHz"],
                 "t_max": "0.5 s", "N": 500, "stray": "150 mG"},
}

LIMITS = {"current": 1.0, "field": 100e-4}


def parse_quantity(value: Any, dimension: str, where: str = "") -> float:
    """'13 mA' -> 0.013 (SI).  Unit-less or wrong-dimension values raise ConfigError."""
    if isinstance(value, bool) or not isinstance(value, str):
        raise ConfigError(f"{where}: expected a quantity with a {dimension} unit, got {value!r}")
    m = _QTY.match(value)
    if not m:
        raise ConfigError(f"{where}: cannot parse {value!r} as '<number> <unit>'")
    num, unit = float(m.group(1)), m.group(2)
    table = _UNITS[dimension]
    if unit not in table:
        raise ConfigError(f"{where}: unit {unit!r} is not a {dimension} unit "
                          f"(allowed: {', '.join(table)})")
    x = num * table[unit]
    if not math.isfinite(x):
        raise ConfigError(f"{where}: non-finite value")
    lim = LIMITS.get(dimension)
    if lim is not None and abs(x) >= lim:
        raise ConfigError(f"{where}: {value} is outside the sanity bound (< {lim:g} SI)")
    return x


def format_quantity(x: float, dimension: str) -> str:
    unit = {"length": "um", "current": "mA", "field": "G", "temperature": "nK",
            "frequency": "kHz", "time": "ms"}[dimension]
    return f"{x / _UNITS[dimension][unit]!r} {unit}"


def _merge(base: dict, over: dict, path=""):
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if k not in base:
            raise ConfigError(f"unknown key {path}{k}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"{path}{k} must be a mapping")
            out[k] = _merge(base[k], v, f"{path}{k}.")
        else:
            out[k] = v
    return out


@dataclass(frozen=True)
class ScenarioConfig:
    raw: dict  # resolved text form, defaults materialized
    si: dict  # parsed SI values

    @property
    def seed(self) -> int:
        return self.si["scenario"]["seed"]

    @property
    def kind(self) -> str:
        return self.si["scenario"]["kind"]

    def section(self, name: str) -> dict:
        return self.si[name]


def resolve(user: Optional[dict] = None, seed: Optional[int] = None,
            workers: Optional[int] = None, out: Optional[str] = None) -> ScenarioConfig:
    raw = _merge(DEFAULTS, user or {})
    if seed is not None:
        raw["scenario"]["seed"] = int(seed)
    if workers is not None:
        raw["scenario"]["workers"] = int(workers)
    if out is not None:
        raw["scenario"]["out"] = str(out)
    si: dict = {}
    for sec, keys in SCHEMA.items():
        si[sec] = {}
        for key, dim in keys.items():
            v = raw[sec][key]
            where = f"{sec}.{key}"
            if dim is None:
                si[sec][key] = v
            elif isinstance(v, list):
                si[sec][key] = [parse_quantity(x, dim, where) for x in v]
            else:
                si[sec][key] = parse_quantity(v, dim, where)
    sc = si["scenario"]
    if sc["seed"] is None:
        raise ConfigError("scenario.seed is required (no wall-clock seeding)")
    if not isinstance(sc["seed"], int) or isinstance(sc["seed"], bool) or not (
            0 <= sc["seed"] < 2**64):
        raise ConfigError("scenario.seed must be an unsigned 64-bit integer")
    if sc["kind"] not in ("dc_positive", "dc_negative", "ac"):
        raise ConfigError(f"scenario.kind must be dc_positive, dc_negative or ac, not {sc['kind']!r}")
    if not isinstance(sc["workers"], int) or sc["workers"] < 1:
        raise ConfigError("scenario.workers must be a positive integer")
    for sec, key in (("roughness", "realizations"), ("ensemble", "N"), ("study", "realizations"),
                     ("lifetime", "N")):
        v = si[sec][key]
        if not isinstance(v, int) or isinstance(v, bool) or v < 0:
            raise ConfigError(f"{sec}.{key} must be a non-negative integer")
    sc_list = si["study"]["scales"]
    if not isinstance(sc_list, list) or not sc_list or not all(
            isinstance(x, (int, float)) and not isinstance(x, bool) and x >= 0 for x in sc_list):
        raise ConfigError("study.scales must be a non-empty list of non-negative numbers")
    if not isinstance(si["lifetime"]["frequencies"], list):
        si["lifetime"]["frequencies"] = [si["lifetime"]["frequencies"]]
    if not si["lifetime"]["frequencies"]:
        raise ConfigError("lifetime.frequencies must not be empty")
    if si["trap"]["h_model"] not in ("harmonic", "full"):
        raise ConfigError("trap.h_model must be 'harmonic' or 'full'")
    if si["analysis"]["chain"] not in ("folded", "explicit"):
        raise ConfigError("analysis.chain must be 'folded' or 'explicit'")
    if si["trap"]["B_z0"] <= 0:
        raise ConfigError("trap.B_z0 must be positive")
    return ScenarioConfig(raw, si)


def load(path, **overrides) -> ScenarioConfig:
    text = Path(path).read_text()  # OSError propagates as an I/O failure
    try:
        user = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(user, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return resolve(user, **overrides)


def dump(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(cfg.raw, sort_keys=True, allow_unicode=True)
