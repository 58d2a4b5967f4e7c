"""Experiment configuration: an INI file with a fixed schema.

Unknown sections or keys are errors (reported with their line number) so a
misspelled tolerance never silently falls back to a default.
"""
from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io


class ConfigError(ValueError):
    pass


def _grid(text: str) -> np.ndarray:
    """lin:a:b:n, log:a:b:n or a comma-separated list."""
    text = text.strip()
    if text.startswith(("lin:", "log:")):
        parts = text.split(":")
        if len(parts) != 4:
            raise ValueError(f"grid {text!r} must look like lin:a:b:n or log:a:b:n")
        a, b, n = float(parts[1]), float(parts[2]), int(parts[3])
        return np.linspace(a, b, n) if parts[0] == "lin" else np.geomspace(a, b, n)
    return np.array([float(v) for v in text.split(",") if v.strip()])


def _float(text: str) -> float:
    t = text.strip().lower()
    if t in ("inf", "+inf", "infinity"):
        return math.inf
    return float(t)


def _int(text: str) -> int:
    v = float(text)
    if v != int(v):
        raise ValueError(f"{text!r} is not an integer")
    return int(v)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"{text!r} is not a boolean")


def _str(text: str) -> str:
    return text.strip()


def _window(text: str):
    t = text.strip()
    if t == "auto":
        return None
    lo, hi = t.split(":")
    return (float(lo), float(hi))


def _kappa(text: str):
    t = text.strip()
    return "mu" if t == "mu" else float(t)


# section -> key -> (parser, default); default None with required=True below
SCHEMA = {
    "law": {"kind": (_str, None), "c0": (_float, 10.0), "strict": (_bool, True)},
    "simulate": {"seed": (_int, None), "n_stop": (_int, 20), "replicas": (_int, 1000),
                 "barrier": (_float, 15.0), "particle_cap": (_int, 10**7), "chunk": (_int, 20_000)},
    "calibrate": {"draws": (_int, 10**6)},
    "analysis": {"x_grid": (_grid, "log:1:50:30"), "c_window": (_window, "auto"),
                 "bootstrap_reps": (_int, 200), "s_grid": (_grid, "log:0.001:10:41"),
                 "d_grid": (_grid, "lin:2:6:9"), "g_grid": (_grid, "lin:1:6:11"), "g_draws": (_int, 100_000),
                 "t_grid": (_grid, "lin:10:50:9"), "harmonic_splits": (_int, 10)},
    "potential": {"p": (_str, "indicator:0:5"), "x": (_float, 3.0), "g": (_str, "indicator:0:5"),
                  "h": (_str, "zero"), "kappa": (_kappa, "mu"), "x_grid": (_grid, "lin:1:20:20"),
                  "draws": (_int, 100_000), "n_ladders": (_int, 100_000), "y_list": (_grid, "9,19,39")},
    "fluct": {"n_list": (_grid, "64,256,1024"), "deep_factor": (_int, 8), "replicas": (_int, 1000),
              "sensitivity_replicas": (_int, 1000)},
    "stable": {"draws": (_int, 10**6)},
    "lambert": {"cases": (_int, 100)},
    "output": {"dir": (_str, "out")},
}
REQUIRED = {("law", "kind"), ("simulate", "seed")}
FREE_SECTIONS = {"law.params"}
HASH_EXCLUDED = {"output"}
SAMPLE_SECTIONS = ("law", "law.params", "simulate")
SAMPLE_EXCLUDED = {("simulate", "replicas"), ("simulate", "chunk")}


def _line_of(text: str, section: str, key: str | None = None) -> int | None:
    current = None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"^\[(.+)\]$", s)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return i
            continue
        if key is not None and current == section and re.match(rf"^{re.escape(key)}\s*[=:]", s):
            return i
    return None


@dataclass
class ExperimentConfig:
    values: dict
    raw: dict
    path: Path | None = None

    def __getitem__(self, section):
        return self.values[section]

    @property
    def law_params(self) -> dict:
        return self.values["law.params"]

    @property
    def output_dir(self) -> Path:
        out = Path(self.values["output"]["dir"])
        if not out.is_absolute() and self.path is not None:
            out = self.path.parent / out
        return out

    def canonical(self, sections=None, excluded=frozenset()) -> dict:
        secs = sections or [s for s in self.raw if s not in HASH_EXCLUDED]
        return {s: {k: v for k, v in sorted(self.raw.get(s, {}).items()) if (s, k) not in excluded}
                for s in secs}

    @property
    def config_hash(self) -> str:
        return io.digest(self.canonical())

    @property
    def sample_hash(self) -> str:
        return io.digest(self.canonical(SAMPLE_SECTIONS, SAMPLE_EXCLUDED))


def parse_config(text: str, path: Path | None = None) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, default_section="__defaults__")
    cp.optionxform = str
    try:
        cp.read_string(text, source=str(path or "<config>"))
    except configparser.Error as exc:
        raise ConfigError(f"config syntax error: {exc}") from None
    where = f"{path}" if path else "config"
    values: dict = {}
    raw: dict = {}
    for sec in cp.sections():
        if sec not in SCHEMA and sec not in FREE_SECTIONS:
            raise ConfigError(f"{where}:{_line_of(text, sec)}: unknown section [{sec}]")
    for sec, keys in SCHEMA.items():
        present = dict(cp.items(sec)) if cp.has_section(sec) else {}
        for key in present:
            if key not in keys:
                raise ConfigError(f"{where}:{_line_of(text, sec, key)}: unknown key {key!r} in [{sec}]")
        values[sec] = {}
        raw[sec] = {}
        for key, (parse, default) in keys.items():
            if key in present:
                txt = present[key]
            elif (sec, key) in REQUIRED:
                raise ConfigError(f"{where}: missing required key {key!r} in [{sec}]")
            else:
                txt = default
            try:
                values[sec][key] = parse(txt) if isinstance(txt, str) else txt
            except (ValueError, TypeError) as exc:
                line = _line_of(text, sec, key)
                raise ConfigError(f"{where}:{line}: bad value for {sec}.{key}: {exc}") from None
            raw[sec][key] = str(txt).strip()
    params = dict(cp.items("law.params")) if cp.has_section("law.params") else {}
    values["law.params"] = {}
    raw["law.params"] = {}
    for key, txt in params.items():
        try:
            values["law.params"][key] = float(txt)
        except ValueError:
            raise ConfigError(f"{where}:{_line_of(text, 'law.params', key)}: law parameter {key!r} must be a number") from None
        raw["law.params"][key] = txt.strip()
    return ExperimentConfig(values, raw, path)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, path)
