"""Run configuration: training, backbone and synthetic-data settings in one flat namespace.

Config files are flat JSON objects.  Every key belongs to exactly one of
:class:`TrainConfig`, :class:`BackboneConfig` or :class:`SyntheticSpec`; the
center-loss weight is spelled ``lambda`` in files.  A ``preset`` key applies a
named bundle of defaults before the remaining keys.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Iterable, Mapping

from .backbone import BackboneConfig
from .data import SyntheticSpec
from .erase import REDUCTIONS
from .errors import ConfigError


@dataclass
class TrainConfig:
    epochs: int = 30
    base_lr: float = 0.01
    anneal_factor: float = 0.9
    anneal_every: int = 2
    momentum: float = 0.9
    weight_decay: float = 1e-5
    batch_size: int = 8
    theta: float = 0.5
    lam: float = 0.5
    alpha: float = 0.5
    seed: int = 0
    enable_ca: bool = True
    enable_ae: bool = True
    enable_center: bool = True
    attention_reduce: str = "argmax_gap"
    transpose_w_second: bool = False
    shared_classifier: bool = True
    bilinear_normalize: bool = True
    precision: str = "float32"

    def validate(self) -> None:
        if self.base_lr <= 0:
            raise ConfigError(f"base_lr must be positive, got {self.base_lr}")
        if not 0 < self.anneal_factor <= 1:
            raise ConfigError(f"anneal_factor must lie in (0, 1], got {self.anneal_factor}")
        if self.anneal_every < 1 or self.epochs < 0:
            raise ConfigError("anneal_every must be >= 1 and epochs >= 0")
        if self.batch_size < 2 or self.batch_size % 2:
            raise ConfigError(f"batch_size must be even and >= 2, got {self.batch_size}")
        if not 0 < self.theta < 1:
            raise ConfigError(f"theta must lie in (0, 1), got {self.theta}")
        if self.lam < 0 or self.alpha < 0:
            raise ConfigError("lambda and alpha must be non-negative")
        if self.attention_reduce not in REDUCTIONS:
            raise ConfigError(f"attention_reduce must be one of {REDUCTIONS}")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32 or float64, got {self.precision!r}")

    @property
    def flags(self) -> dict[str, bool]:
        return {"enable_ca": self.enable_ca, "enable_ae": self.enable_ae,
                "enable_center": self.enable_center}


PRESETS: dict[str, dict[str, Any]] = {
    "desk": {},
    "long": {"epochs": 180, "batch_size": 32},
}

_FILE_NAMES = {"lam": "lambda"}


def _owner_table() -> dict[str, tuple[str, type]]:
    table = {}
    for section, cls in (("train", TrainConfig), ("backbone", BackboneConfig), ("data", SyntheticSpec)):
        for f in fields(cls):
            key = _FILE_NAMES.get(f.name, f.name)
            if key in table:
                raise AssertionError(f"duplicate config key {key}")
            table[key] = (section, f)
    return table


_KEYS = _owner_table()


def _coerce(key: str, f, value):
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    try:
        if kind.startswith("tuple"):
            if isinstance(value, str):
                value = [v for v in value.replace("[", "").replace("]", "").split(",") if v.strip()]
            return tuple(int(v) for v in value)
        if kind == "bool":
            if isinstance(value, str):
                if value.lower() not in ("true", "false", "1", "0"):
                    raise ValueError(value)
                return value.lower() in ("true", "1")
            return bool(value)
        if kind == "int":
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if kind == "float":
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {key!r}: cannot interpret {value!r} as {kind}") from None


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    data: SyntheticSpec = field(default_factory=SyntheticSpec)

    def validate(self) -> None:
        self.train.validate()
        self.backbone.validate()
        self.data.validate()

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for section in (self.train, self.backbone, self.data):
            for k, v in asdict(section).items():
                out[_FILE_NAMES.get(k, k)] = list(v) if isinstance(v, tuple) else v
        return dict(sorted(out.items()))

    @classmethod
    def from_dict(cls, values: Mapping[str, Any]) -> "RunConfig":
        return cls().updated(values)

    def updated(self, values: Mapping[str, Any]) -> "RunConfig":
        values = dict(values)
        merged: dict[str, Any] = {}
        preset = values.pop("preset", None)
        if preset is not None:
            if preset not in PRESETS:
                raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
            merged.update(PRESETS[preset])
        merged.update(values)
        parts: dict[str, dict[str, Any]] = {"train": {}, "backbone": {}, "data": {}}
        for key, value in merged.items():
            if key not in _KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            section, f = _KEYS[key]
            parts[section][f.name] = _coerce(key, f, value)
        cfg = RunConfig(replace(self.train, **parts["train"]),
                        replace(self.backbone, **parts["backbone"]),
                        replace(self.data, **parts["data"]))
        cfg.validate()
        return cfg

    def with_overrides(self, pairs: Iterable[str]) -> "RunConfig":
        """Apply ``key=value`` strings; values are read as JSON when possible."""
        values = {}
        for pair in pairs:
            if "=" not in pair:
                raise ConfigError(f"override {pair!r} is not of the form key=value")
            key, raw = pair.split("=", 1)
            try:
                values[key.strip()] = json.loads(raw)
            except json.JSONDecodeError:
                values[key.strip()] = raw
        return self.updated(values)


def load_config(path: str | Path | None = None, overrides: Iterable[str] = ()) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        try:
            values = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(values, dict):
            raise ConfigError(f"{path}: config must be a flat JSON object")
        cfg = cfg.updated(values)
    return cfg.with_overrides(overrides)
