"""Flat ``key = value`` run configuration shared by all subcommands."""

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ConfigError


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _str_list(text):
    return [item.strip() for item in text.split(",") if item.strip()]


def _int_list(text):
    return [int(x) for x in _str_list(text)]


def _float_list(text):
    return [float(x) for x in _str_list(text)]


def parse_grid(text):
    """Parse ``start:stop:step`` (inclusive) or a comma list into a sorted grid."""
    text = text.strip()
    if ":" in text:
        parts = [float(x) for x in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise ValueError(f"grid must be start:stop:step with step > 0, got {text!r}")
        start, stop, step = parts
        count = int(np.floor((stop - start) / step + 1e-9)) + 1
        values = [round(start + k * step, 12) for k in range(max(count, 0))]
    else:
        values = _float_list(text)
    if not values:
        raise ValueError("empty grid")
    return sorted(set(values))


def parse_mnar_vars(text):
    """Parse ``col:phi,col:phi`` into a list of ``(col, phi)`` pairs."""
    out = []
    for item in _str_list(text):
        col, sep, phi = item.rpartition(":")
        if not sep or not col:
            raise ValueError(f"expected column:phi, got {item!r}")
        out.append((col.strip(), float(phi)))
    return out


@dataclass(frozen=True)
class Key:
    parse: Callable
    help: str
    default: object = None


KEYS = {
    "input": Key(str, "input CSV with a header row"),
    "out_dir": Key(str, "directory for output files", "."),
    "seed": Key(int, "random seed", 0),
    "na_token": Key(str, "cell text marking a missing value", "NA"),
    "target": Key(str, "the possibly not-at-random column"),
    "mar": Key(_str_list, "comma list of other incomplete (MAR) columns"),
    "observed": Key(_str_list, "comma list of fully observed columns (W)"),
    "binary": Key(_str_list, "comma list of binary columns; disables kind inference"),
    "m": Key(_int_list, "number of imputations M (simulate accepts a comma list)", [50]),
    "iterations": Key(int, "chained-equation passes per imputation", 10),
    "fixed_sigma": Key(float, "fix the normal imputation dispersion at this SD"),
    "imputations": Key(str, "existing imputations CSV (from 'impute') to reuse"),
    "phi1": Key(float, "sensitivity parameter (log-odds of observation per unit of target)", 0.0),
    "phi1_grid": Key(parse_grid, "grid of phi1 values: start:stop:step or comma list"),
    "link": Key(str, "missingness model link: logistic or probit", "logistic"),
    "mnar_vars": Key(parse_mnar_vars, "several MNAR columns as col:phi,col:phi"),
    "analysis": Key(str, "target analysis: mean, linear or logistic"),
    "outcome": Key(str, "outcome column of the target analysis"),
    "covariates": Key(_str_list, "comma list of covariate columns", []),
    "intercept": Key(_bool, "include an intercept", True),
    "se": Key(_str_list, "comma list of SE methods: louis, bootstrap, jackknife", ["louis"]),
    "boot_reps": Key(int, "bootstrap replicates B", 200),
    "workers": Key(int, "parallel worker processes", 1),
    "n": Key(_int_list, "simulated subjects per dataset (comma list)", [1000]),
    "family": Key(_str_list, "simulated outcome family: linear, logistic (comma list)", ["linear"]),
    "true_phi1": Key(_float_list, "true phi1 of the simulated missingness (comma list)", [1.0]),
    "replicates": Key(int, "simulation replicates per cell", 200),
    "methods": Key(_str_list, "methods: complete_case, mar, carpenter, proposed", ["complete_case", "mar", "carpenter", "proposed"]),
    "plots": Key(_bool, "write SVG plots", True),
}

_COMMON = ["input", "out_dir", "seed", "na_token", "target", "mar", "observed", "binary", "m", "iterations", "fixed_sigma"]
SUBCOMMAND_KEYS = {
    "impute": _COMMON,
    "weight": _COMMON + ["imputations", "phi1", "link", "mnar_vars"],
    "analyze": _COMMON
    + ["imputations", "phi1", "phi1_grid", "link", "mnar_vars", "analysis", "outcome", "covariates", "intercept", "se", "boot_reps", "workers"],
    "simulate": [
        "out_dir", "seed", "n", "family", "true_phi1", "phi1_grid", "m", "replicates", "methods",
        "se", "boot_reps", "iterations", "fixed_sigma", "workers", "plots",
    ],
}
REQUIRED = {
    "impute": ["input"],
    "weight": ["input"],
    "analyze": ["input", "target", "analysis", "outcome"],
    "simulate": [],
}


def read_config_file(path) -> dict:
    """Read ``key = value`` lines; ``#`` starts a comment."""
    entries = {}
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or not key:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        if key in entries:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        entries[key] = value.strip()
    return entries


def resolve(subcommand: str, file_entries: dict, overrides: dict) -> dict:
    """Merge file entries with overrides, reject unknown keys, parse and default.

    Raises :class:`ConfigError` before any computation if a key is unknown
    for the subcommand, unparsable, or required but missing.
    """
    allowed = SUBCOMMAND_KEYS[subcommand]
    raw = dict(file_entries)
    raw.update({k: v for k, v in overrides.items() if v is not None})
    unknown = sorted(k for k in raw if k not in allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) for '{subcommand}': {', '.join(unknown)}; accepted: {', '.join(allowed)}")
    cfg = {}
    for key in allowed:
        spec = KEYS[key]
        if key in raw:
            try:
                cfg[key] = spec.parse(str(raw[key]))
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {exc}") from None
        else:
            cfg[key] = spec.default
    missing = [k for k in REQUIRED[subcommand] if cfg.get(k) is None]
    if subcommand == "weight" and cfg.get("target") is None and cfg.get("mnar_vars") is None:
        missing.append("target (or mnar_vars)")
    if missing:
        raise ConfigError(f"missing required key(s) for '{subcommand}': {', '.join(missing)}")
    return cfg


def config_hash(cfg: dict) -> str:
    text = "\n".join(f"{k}={cfg[k]!r}" for k in sorted(cfg))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def describe_keys(subcommand: str) -> str:
    lines = ["accepted config keys (config file 'key = value' or --set key=value):"]
    for key in SUBCOMMAND_KEYS[subcommand]:
        spec = KEYS[key]
        req = " [required]" if key in REQUIRED[subcommand] else ""
        default = "" if spec.default is None else f" (default: {spec.default})"
        lines.append(f"  {key}: {spec.help}{default}{req}")
    return "\n".join(lines)
