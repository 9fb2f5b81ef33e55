"""JSON experiment configuration.

Every section maps onto one of the library dataclasses; values are SI
(metres, seconds, amperes, tesla, hertz). Keys that a section does not know
are rejected with their full dotted path, and each dataclass validates its
own invariants on construction.

Example::

    {"seed": 7, "world": {"coil": {"current": 0.05}}, "odmr": {"dwell_per_point": 2.0}}
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .control import ControllerConfig
from .mapping import ScanPlan
from .odmr import ODMRConfig
from .world import DeviceWorld

NULLABLE = {"world.particle.field_moment", "output_dir"}
SEED_LIMIT = 2**64


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class HoldRecipe:
    duration: float = 60.0  # s
    target: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be > 0")


@dataclass(frozen=True)
class SpiralRecipe:
    pitch: float = 2e-6  # m
    legs: int = 12
    dwell: float = 5.0  # s held at each corner

    def __post_init__(self):
        if self.pitch <= 0:
            raise ValueError("pitch must be > 0")
        if self.legs < 1:
            raise ValueError("legs must be >= 1")
        if self.dwell < 0:
            raise ValueError("dwell must be >= 0")


@dataclass(frozen=True)
class HeightCurveRecipe:
    max_current: float = 0.1  # A
    n_currents: int = 21

    def __post_init__(self):
        if self.max_current <= 0:
            raise ValueError("max_current must be > 0")
        if self.n_currents < 2:
            raise ValueError("n_currents must be >= 2")


@dataclass(frozen=True)
class ESRRecipe:
    offset: np.ndarray = field(default_factory=lambda: np.array([1.5e-6, 0.0]))


@dataclass(frozen=True)
class Recipes:
    hold: HoldRecipe = field(default_factory=HoldRecipe)
    spiral: SpiralRecipe = field(default_factory=SpiralRecipe)
    height_curve: HeightCurveRecipe = field(default_factory=HeightCurveRecipe)
    esr: ESRRecipe = field(default_factory=ESRRecipe)


@dataclass(frozen=True)
class ExperimentConfig:
    world: DeviceWorld = field(default_factory=DeviceWorld)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    odmr: ODMRConfig = field(default_factory=ODMRConfig)
    scan: ScanPlan = field(default_factory=ScanPlan)
    recipes: Recipes = field(default_factory=Recipes)
    seed: int = 0
    output_dir: str | None = None

    def __post_init__(self):
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or not 0 <= self.seed < SEED_LIMIT:
            raise ValueError("seed must be an integer in [0, 2**64)")

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def _init_fields(cls):
    return [f for f in dataclasses.fields(cls) if f.init]


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _convert(default, value, path: str):
    if dataclasses.is_dataclass(default):
        return _build(type(default), value, path)
    if value is None:
        if path in NULLABLE:
            return None
        raise ConfigError(f"{path}: null is not allowed")
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true or false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer")
        return value
    if isinstance(default, float):
        if not _is_number(value) or not math.isfinite(value):
            raise ConfigError(f"{path}: expected a finite number")
        return float(value)
    if isinstance(default, np.ndarray):
        arr = _numeric_array(value, path)
        if arr.shape != default.shape:
            raise ConfigError(f"{path}: expected shape {list(default.shape)}, got {list(arr.shape)}")
        return arr
    if isinstance(default, list):  # list of 2-vectors (scan offsets)
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list")
        out = []
        for i, item in enumerate(value):
            arr = _numeric_array(item, f"{path}[{i}]")
            if arr.shape != (2,):
                raise ConfigError(f"{path}[{i}]: expected [x, y]")
            out.append(arr)
        return out
    if isinstance(default, str) or default is None:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string")
        return value
    raise ConfigError(f"{path}: unsupported value")  # pragma: no cover


def _numeric_array(value, path):
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: expected numbers") from None
    if not np.all(np.isfinite(arr)) or isinstance(value, (str, bool)):
        raise ConfigError(f"{path}: expected finite numbers")
    return arr


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    defaults = cls()
    known = {f.name for f in _init_fields(cls)}
    kwargs = {}
    for key, value in data.items():
        sub = f"{path}.{key}" if path else key
        if key not in known:
            raise ConfigError(f"unknown key '{sub}'")
        kwargs[key] = _convert(getattr(defaults, key), value, sub)
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from None


def config_from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data, "")


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    return config_from_dict(data)


def config_to_dict(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: config_to_dict(getattr(obj, f.name)) for f in _init_fields(type(obj))}
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, list):
        return [config_to_dict(v) for v in obj]
    return obj


def dump_config(cfg: ExperimentConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2) + "\n"
