"""Run configuration: one JSON document with strict keys and defaults.

Sections: seed, data, network, training, metrics.  Unknown keys are
rejected with their dotted path; command-line overrides use the same
dotted paths (``training.epochs=60``) with JSON-parsed values.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .errors import ConfigurationError
from .network import ARNetConfig
from .training import TrainConfig

_DEFAULTS = {
    "seed": 0,
    "data": {
        "samples": 200,
        "bands": 4,
        "height": 64,
        "width": 64,
        "factor": 4,
        "objects": 12,
        # Flat synthetic regions make l1 ties exact and training stalls on
        # the kink; shared-field texture both breaks the ties and gives
        # the pan channel real high-frequency content to inject.
        "noise": 0.02,
        "sigma": 1.7,
        "holdout": 20,
        "weights": None,
    },
    "network": {
        "base_channels": 32,
        "num_levels": 2,
        "hw_range": "1-18",
        "k_max": 7,
        "n": None,
        "m": None,
        "hwa": True,
        "nspa": True,
        "at": True,
        "fixed_spec": [3, 3],
    },
    "training": {
        "epochs": 70,
        "explore_epochs": 10,
        "batch_size": 8,
        "lr0": 6e-4,
        "decay_factor": 0.8,
        "decay_period": 20,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-8,
    },
    "metrics": {
        "ratio": 4,
        "window": 32,
    },
}


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return _is_int(v) or isinstance(v, float)


def _check_int(path, v):
    if not _is_int(v):
        raise ConfigurationError(f"{path}: expected an integer, got {v!r}")


def _check_num(path, v):
    if not _is_num(v):
        raise ConfigurationError(f"{path}: expected a number, got {v!r}")


def _check_bool(path, v):
    if not isinstance(v, bool):
        raise ConfigurationError(f"{path}: expected true/false, got {v!r}")


def _check_ranges(path, v):
    if isinstance(v, str):
        return
    if isinstance(v, list) and all(isinstance(e, str) for e in v):
        return
    raise ConfigurationError(
        f"{path}: expected a range label or a list of them, got {v!r}")


def _check_spec(path, v):
    if not (isinstance(v, list) and len(v) == 2 and all(_is_int(e) for e in v)):
        raise ConfigurationError(
            f"{path}: expected a pair of integers, got {v!r}")


def _check_opt_num(path, v):
    if v is not None:
        _check_num(path, v)


def _check_opt_weights(path, v):
    if v is None:
        return
    if not (isinstance(v, list) and v and all(_is_num(e) for e in v)):
        raise ConfigurationError(
            f"{path}: expected a list of band weights, got {v!r}")


_VALIDATORS = {
    "seed": _check_int,
    "data.samples": _check_int,
    "data.bands": _check_int,
    "data.height": _check_int,
    "data.width": _check_int,
    "data.factor": _check_int,
    "data.objects": _check_int,
    "data.noise": _check_num,
    "data.sigma": _check_num,
    "data.holdout": _check_int,
    "data.weights": _check_opt_weights,
    "network.base_channels": _check_int,
    "network.num_levels": _check_int,
    "network.hw_range": _check_ranges,
    "network.k_max": _check_int,
    "network.n": _check_opt_num,
    "network.m": _check_opt_num,
    "network.hwa": _check_bool,
    "network.nspa": _check_bool,
    "network.at": _check_bool,
    "network.fixed_spec": _check_spec,
    "training.epochs": _check_int,
    "training.explore_epochs": _check_int,
    "training.batch_size": _check_int,
    "training.lr0": _check_num,
    "training.decay_factor": _check_num,
    "training.decay_period": _check_int,
    "training.beta1": _check_num,
    "training.beta2": _check_num,
    "training.eps": _check_num,
    "metrics.ratio": _check_int,
    "metrics.window": _check_int,
}


def _walk(user, defaults, prefix=""):
    if not isinstance(user, dict):
        raise ConfigurationError(
            f"{prefix or 'config'}: expected an object, got {user!r}")
    for key, value in user.items():
        path = f"{prefix}.{key}" if prefix else key
        if key not in defaults:
            raise ConfigurationError(f"unknown config key {path!r}")
        if isinstance(defaults[key], dict):
            _walk(value, defaults[key], path)
        else:
            _VALIDATORS[path](path, value)


def _merge(user, defaults):
    out = copy.deepcopy(defaults)
    for key, value in user.items():
        if isinstance(defaults.get(key), dict):
            out[key] = _merge(value, defaults[key])
        else:
            out[key] = value
    return out


def apply_override(raw: dict, assignment: str) -> None:
    """Apply one ``dotted.path=value`` override in place; the value is
    parsed as JSON, falling back to a bare string."""
    if "=" not in assignment:
        raise ConfigurationError(
            f"override {assignment!r} is not of the form key=value")
    key, text = assignment.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigurationError(f"override {assignment!r} has an empty key")
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text
    node = raw
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigurationError(
                f"override {key!r} descends into non-object {part!r}")
    node[parts[-1]] = value


class RunConfig:
    """Validated, fully-defaulted configuration tree."""

    def __init__(self, raw: dict | None = None):
        raw = raw or {}
        _walk(raw, _DEFAULTS)
        self.raw = _merge(raw, _DEFAULTS)
        # Constructor-level checks run eagerly so bad values surface
        # before any command touches the filesystem.
        self.network_config()
        self.train_config()
        d = self.raw["data"]
        for name in ("samples", "height", "width", "factor", "objects"):
            if d[name] < (0 if name == "objects" else 1):
                raise ConfigurationError(
                    f"data.{name} must be positive, got {d[name]}")
        if d["holdout"] < 0 or d["holdout"] >= max(d["samples"], 1):
            raise ConfigurationError(
                f"data.holdout must be in [0, samples), got {d['holdout']}")
        if d["noise"] < 0:
            raise ConfigurationError(f"data.noise must be >= 0, got {d['noise']}")
        if d["sigma"] <= 0:
            raise ConfigurationError(f"data.sigma must be > 0, got {d['sigma']}")
        m = self.raw["metrics"]
        if m["ratio"] < 1 or m["window"] < 2:
            raise ConfigurationError(
                f"metrics.ratio/window out of range: {m['ratio']}/{m['window']}")

    @classmethod
    def load(cls, path=None, overrides: list[str] | None = None,
             seed: int | None = None) -> "RunConfig":
        raw = {}
        if path is not None:
            p = Path(path)
            if not p.is_file():
                raise ConfigurationError(f"config file {p} does not exist")
            try:
                raw = json.loads(p.read_text())
            except json.JSONDecodeError as e:
                raise ConfigurationError(f"{p} is not valid JSON: {e}") from None
        for assignment in overrides or []:
            apply_override(raw, assignment)
        if seed is not None:
            raw["seed"] = seed
        return cls(raw)

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    @property
    def data(self) -> dict:
        return self.raw["data"]

    @property
    def metrics(self) -> dict:
        return self.raw["metrics"]

    def network_config(self) -> ARNetConfig:
        n = self.raw["network"]
        return ARNetConfig(
            bands=self.raw["data"]["bands"],
            base_channels=n["base_channels"], num_levels=n["num_levels"],
            hw_range=n["hw_range"], k_max=n["k_max"], n=n["n"], m=n["m"],
            hwa=n["hwa"], nspa=n["nspa"], at=n["at"],
            fixed_spec=tuple(n["fixed_spec"]))

    def train_config(self) -> TrainConfig:
        t = self.raw["training"]
        return TrainConfig(**t)

    def to_json(self) -> str:
        return json.dumps(self.raw, indent=1, sort_keys=True)
