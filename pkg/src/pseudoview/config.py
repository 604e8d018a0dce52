"""Engine configuration: one JSON document with a section per module.

A single top-level ``seed`` feeds every seeded step, so sub-sections carry
no seed of their own. Unknown keys anywhere are rejected.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .degrade import DegradationConfig
from .errors import ConfigError, InvalidInputError
from .segments import DEFAULT_SPATIAL_FACTOR, DEFAULT_TEMPORAL_FACTOR
from .synthesis import DEFAULT_DELTA, CorruptionConfig
from .trajectory import ShiftSpec

CONFIG_ENV = "GADRIVE_CONFIG"


@dataclass(frozen=True)
class SegmentConfig:
    length: int = 16
    temporal_factor: int = DEFAULT_TEMPORAL_FACTOR
    spatial_factor: int = DEFAULT_SPATIAL_FACTOR
    strict: bool = False

    def __post_init__(self):
        if self.length < 2:
            raise InvalidInputError(f"segment length must be >= 2, got {self.length}")
        if self.temporal_factor < 1 or self.spatial_factor < 1:
            raise InvalidInputError("downsampling factors must be >= 1")


@dataclass(frozen=True)
class AlignConfig:
    inverse: bool = False


@dataclass(frozen=True)
class EngineConfig:
    delta: float = DEFAULT_DELTA
    degradation: DegradationConfig = field(default_factory=DegradationConfig)
    segment: SegmentConfig = field(default_factory=SegmentConfig)
    shift: ShiftSpec = field(default_factory=ShiftSpec)
    corruption: CorruptionConfig = field(default_factory=CorruptionConfig)
    align: AlignConfig = field(default_factory=AlignConfig)
    workers: int = 1
    seed: int = 0

    def __post_init__(self):
        if not (self.delta >= 0 and math.isfinite(self.delta)):
            raise ConfigError(f"delta must be finite and >= 0, got {self.delta}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        # the engine seed is the only seed
        object.__setattr__(self, "degradation", replace(self.degradation, seed=self.seed))
        object.__setattr__(self, "corruption", replace(self.corruption, seed=self.seed))

    @classmethod
    def from_dict(cls, doc: dict) -> "EngineConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        _reject_unknown(doc, {f.name for f in fields(cls)}, "config")
        kwargs = {}
        for name, sub in _SECTIONS.items():
            if name in doc:
                kwargs[name] = _build_section(sub, doc[name], name)
        for name in ("delta", "workers", "seed"):
            if name in doc:
                kwargs[name] = doc[name]
        try:
            return cls(**kwargs)
        except (InvalidInputError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        doc = {"delta": self.delta}
        for name in _SECTIONS:
            section = getattr(self, name)
            data = section.to_dict() if hasattr(section, "to_dict") else asdict(section)
            data.pop("seed", None)
            doc[name] = data
        doc["workers"] = self.workers
        doc["seed"] = self.seed
        return doc

    def with_overrides(self, overrides: dict) -> "EngineConfig":
        """Apply dotted-key overrides such as ``{"degradation.blur_sigma": 1.2}``."""
        doc = self.to_dict()
        for key, value in overrides.items():
            node = doc
            *parents, leaf = key.split(".")
            for part in parents:
                if not isinstance(node.get(part), dict):
                    raise ConfigError(f"unknown config section in {key!r}")
                node = node[part]
            if leaf not in node:
                raise ConfigError(f"unknown config key {key!r}")
            node[leaf] = value
        return EngineConfig.from_dict(doc)


_SECTIONS = {
    "degradation": DegradationConfig,
    "segment": SegmentConfig,
    "shift": ShiftSpec,
    "corruption": CorruptionConfig,
    "align": AlignConfig,
}


def _reject_unknown(doc: dict, allowed: set, where: str) -> None:
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def _build_section(cls, doc, name):
    if not isinstance(doc, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    allowed = {f.name for f in fields(cls)} - {"seed"}
    _reject_unknown(doc, allowed, name)
    try:
        return cls(**doc)
    except (InvalidInputError, ValueError, TypeError) as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def load_config(path=None) -> EngineConfig:
    """Read a config file; falls back to $GADRIVE_CONFIG, then to defaults."""
    if path is None:
        path = os.environ.get(CONFIG_ENV) or None
    if path is None:
        return EngineConfig()
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed config JSON in {path}: {exc}") from exc
    return EngineConfig.from_dict(doc)
