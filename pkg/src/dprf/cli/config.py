"""Flat, typed ``key = value`` experiment configuration.

Grammar, one entry per line::

    # comment to end of line
    key = value
    key = v1, v2, v3          # list-typed keys only

Blank lines are ignored.  Keys are the dotted names in :data:`KEYS`; each
has a fixed type (``int``, ``float``, ``bool``, ``str`` or a list of one of
those) and a default.  Booleans accept ``true/false/yes/no/1/0``.  The empty
value ``none`` unsets optional keys.  A key may appear at most once.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import math
from pathlib import Path
from typing import Any

__all__ = ["ConfigError", "Experiment", "ExperimentConfig", "KEYS", "load_config", "parse_config_text"]


class ConfigError(ValueError):
    """Invalid configuration; reported with exit status 1."""


class Experiment(str, enum.Enum):
    CURVES_VS_N = "CurvesVsN"
    SAMPLE_SIZE_SWEEP = "SampleSizeSweep"
    REAL_DATA = "RealData"
    FAIRNESS_ERG = "FairnessERG"
    FAIRNESS_SP = "FairnessSP"
    AUDIT = "Audit"
    BOUND = "Bound"


# key -> (type tag, default); an ``optional`` type admits ``None``
KEYS: dict[str, tuple[str, Any]] = {
    "experiment": ("str", None),
    "seed": ("int", 0),
    "out": ("str", "dprf-out"),
    "svg": ("bool", False),
    "log_y": ("bool", False),
    "repetitions": ("int", 10),
    "allow_unbounded_labels": ("bool", False),
    # data
    "data.source": ("str", "synthetic"),
    "data.path": ("optional str", None),
    "data.schema": ("str", "medical"),
    "data.group": ("optional str", None),
    "data.preprocess": ("optional str", None),
    "data.preprocess_linear": ("str", "fairness-linear"),
    "data.train_frac": ("float", 0.8),
    "data.fn": ("str", "f1"),
    "data.d": ("int", 10),
    "data.m": ("int", 1000),
    "data.m_test": ("int", 200),
    "data.group_sizes": ("list int", [100, 100]),
    "data.group_scales": ("list float", [1.0, 3.0]),
    # features
    "features.N": ("list int", [2000, 4000]),
    "features.sigma_omega_sq": ("float", 1.0),
    "features.kind": ("str", "fourier"),
    # solver
    "solver.methods": ("list str", ["gram"]),
    "solver.kaczmarz_iters": ("optional int", None),
    "solver.sgd_lr_factor": ("float", 1.0),
    "solver.timing_runs": ("int", 3),
    # privacy
    "privacy.epsilon": ("list float", [1.0]),
    "privacy.delta_p": ("float", 1e-5),
    "privacy.eta": ("float", 0.375),
    "privacy.mechanisms": ("list str", ["NonPrivate", "Gaussian", "Gamma", "SGD"]),
    "privacy.noiseless": ("bool", False),
    # sample size sweep
    "sweep.m": ("list int", [50, 100, 200, 400, 800]),
    "sweep.extra_features": ("int", 200),
    # fairness
    "fairness.perturbations": ("int", 100),
    "fairness.grid": ("int", 500),
    "fairness.linear_lambda": ("optional float", None),
    # audit
    "audit.trials": ("int", 100),
    "audit.modes": ("list str", ["swap", "remove"]),
    "audit.draws": ("int", 100000),
    "audit.delta": ("float", 0.1),
    # bound
    "bound.m": ("list int", [100, 1000]),
    "bound.delta": ("float", 0.1),
    "bound.f_norm": ("float", 1.0),
    # concentration constants
    "conditions.C1": ("float", 1.0),
    "conditions.C2": ("float", 1.0),
}

_TRUE = {"true", "yes", "1", "on"}
_FALSE = {"false", "no", "0", "off"}


def _scalar(tag: str, text: str, key: str):
    try:
        if tag == "int":
            return int(text)
        if tag == "float":
            value = float(text)
            if math.isnan(value):
                raise ValueError
            return value
    except ValueError:
        raise ConfigError(f"{key}: expected {tag}, got {text!r}") from None
    if tag == "bool":
        low = text.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError(f"{key}: expected a boolean, got {text!r}")
    return text


def coerce(key: str, value):
    """Convert a raw string (or JSON-decoded value) to the key's declared type."""
    if key not in KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    tag, _ = KEYS[key]
    optional = tag.startswith("optional ")
    tag = tag.removeprefix("optional ")
    if value is None or (isinstance(value, str) and value.strip().lower() == "none"):
        if optional:
            return None
        raise ConfigError(f"{key}: a value is required")
    if tag.startswith("list "):
        inner = tag.removeprefix("list ")
        items = value if isinstance(value, list) else [p.strip() for p in str(value).split(",")]
        if not items or any(isinstance(p, str) and p == "" for p in items):
            raise ConfigError(f"{key}: empty list entry")
        return [_scalar(inner, str(p), key) for p in items]
    if isinstance(value, bool) and tag == "bool":
        return value
    return _scalar(tag, str(value).strip(), key)


def parse_config_text(text: str) -> dict:
    values: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line.strip()!r}")
        key, raw = (p.strip() for p in body.split("=", 1))
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = coerce(key, raw)
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
    return values


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    values: dict
    source: str = "<memory>"

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def experiment(self) -> Experiment:
        return Experiment(self.values["experiment"])

    def with_overrides(self, overrides: dict) -> "ExperimentConfig":
        merged = dict(self.values)
        for k, v in overrides.items():
            merged[k] = coerce(k, v)
        return build_config(merged, self.source)

    def echo(self) -> dict:
        return dict(sorted(self.values.items()))


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def validate(values: dict) -> None:
    """Check every numeric parameter against the preconditions of the module that consumes it."""
    exp = values["experiment"]
    _require(exp is not None, "experiment is required")
    try:
        Experiment(exp)
    except ValueError:
        raise ConfigError(f"experiment must be one of {[e.value for e in Experiment]}, got {exp!r}") from None
    _require(values["seed"] >= 0, "seed must be non-negative")
    _require(values["repetitions"] >= 1, "repetitions must be >= 1")
    _require(values["data.source"] in ("synthetic", "csv"), "data.source must be 'synthetic' or 'csv'")
    if values["data.source"] == "csv":
        path = values["data.path"]
        _require(path is not None, "data.path is required for csv data")
        _require(Path(path).is_file(), f"data file not found: {path}")
        _require(values["data.schema"] in ("medical", "wine"), "data.schema must be 'medical' or 'wine'")
    from dprf.data import PRESETS

    for key in ("data.preprocess", "data.preprocess_linear"):
        if values[key] is not None:
            _require(values[key] in PRESETS, f"{key} must be one of {sorted(PRESETS)}")
    _require(0 < values["data.train_frac"] < 1, "data.train_frac must lie in (0, 1)")
    _require(values["data.fn"] in ("f1", "f2"), "data.fn must be 'f1' or 'f2'")
    for key in ("data.d", "data.m", "data.m_test"):
        _require(values[key] >= 1, f"{key} must be >= 1")
    _require(len(values["data.group_sizes"]) == len(values["data.group_scales"]),
             "data.group_sizes and data.group_scales must have equal length")
    _require(all(s >= 1 for s in values["data.group_sizes"]), "group sizes must be >= 1")
    _require(all(s > 0 for s in values["data.group_scales"]), "group scales must be positive")
    _require(all(n >= 1 for n in values["features.N"]), "features.N entries must be >= 1")
    _require(values["features.sigma_omega_sq"] > 0, "features.sigma_omega_sq must be positive")
    _require(values["features.kind"] in ("fourier", "cosine"), "features.kind must be 'fourier' or 'cosine'")
    for meth in values["solver.methods"]:
        _require(meth in ("gram", "svd", "pinv", "kaczmarz"),
                 f"solver method {meth!r} not in gram, svd, pinv, kaczmarz")
    if values["solver.kaczmarz_iters"] is not None:
        _require(values["solver.kaczmarz_iters"] >= 1, "solver.kaczmarz_iters must be >= 1")
    _require(values["solver.sgd_lr_factor"] > 0, "solver.sgd_lr_factor must be positive")
    _require(values["solver.timing_runs"] >= 1, "solver.timing_runs must be >= 1")
    for eps in values["privacy.epsilon"]:
        _require(0 < eps <= 1, f"privacy.epsilon entries must lie in (0, 1], got {eps}")
    _require(0 < values["privacy.delta_p"] < 1, "privacy.delta_p must lie in (0, 1)")
    _require(0 < values["privacy.eta"] < 0.5, "privacy.eta must lie in (0, 1/2)")
    for mech in values["privacy.mechanisms"]:
        _require(mech in ("NonPrivate", "Gaussian", "Gamma", "SGD"),
                 f"mechanism {mech!r} not in NonPrivate, Gaussian, Gamma, SGD")
    _require(all(m >= 1 for m in values["sweep.m"]), "sweep.m entries must be >= 1")
    _require(values["sweep.extra_features"] >= 0, "sweep.extra_features must be >= 0")
    _require(values["fairness.perturbations"] >= 1, "fairness.perturbations must be >= 1")
    _require(values["fairness.grid"] >= 2, "fairness.grid must be >= 2")
    if values["fairness.linear_lambda"] is not None:
        _require(values["fairness.linear_lambda"] > 0, "fairness.linear_lambda must be positive")
    _require(values["audit.trials"] >= 1, "audit.trials must be >= 1")
    for mode in values["audit.modes"]:
        _require(mode in ("swap", "remove"), f"audit mode {mode!r} not in swap, remove")
    _require(values["audit.draws"] >= 100, "audit.draws must be >= 100")
    _require(0 < values["audit.delta"] < 1, "audit.delta must lie in (0, 1)")
    _require(all(m >= 1 for m in values["bound.m"]), "bound.m entries must be >= 1")
    _require(0 < values["bound.delta"] < 1, "bound.delta must lie in (0, 1)")
    _require(values["bound.f_norm"] > 0, "bound.f_norm must be positive")
    _require(values["conditions.C1"] > 0 and values["conditions.C2"] > 0, "condition constants must be positive")
    # interpolation needs N >= m
    if exp in ("CurvesVsN", "FairnessERG", "FairnessSP", "Audit") and values["data.source"] == "synthetic":
        m = sum(values["data.group_sizes"]) if exp in ("FairnessERG", "FairnessSP") else values["data.m"]
        small = [n for n in values["features.N"] if n < m]
        _require(not small, f"features.N entries {small} are below the training size m={m}")


def build_config(values: dict, source: str = "<memory>") -> ExperimentConfig:
    full = {k: (list(d) if isinstance(d, list) else d) for k, (_, d) in KEYS.items()}
    for k, v in values.items():
        if k not in KEYS:
            raise ConfigError(f"unknown config key {k!r}")
        full[k] = v
    validate(full)
    return ExperimentConfig(full, source)


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Read a config file, or the ``config`` block of a run manifest (``.json``)."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        try:
            block = json.loads(text)["config"]
        except (json.JSONDecodeError, KeyError, TypeError):
            raise ConfigError(f"{path}: not a run manifest with a 'config' block") from None
        values = {k: coerce(k, v) for k, v in block.items()}
    else:
        values = parse_config_text(text)
    cfg = build_config(values, str(path))
    if overrides:
        cfg = cfg.with_overrides(overrides)
    return cfg
