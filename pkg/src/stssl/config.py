"""Flat ``key = value`` run configuration.

Every key names a field of exactly one of the config dataclasses; the
value syntax follows the field's default (comma-separated for tuples,
``true``/``false`` for booleans). Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .augment import AugmentationConfig
from .geometry import TemporalConfig
from .model import ModelConfig
from .sequence import SamplerConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


_SECTIONS = {
    "train": TrainConfig,
    "model": ModelConfig,
    "augment": AugmentationConfig,
    "sampler": SamplerConfig,
    "temporal": TemporalConfig,
}


def _fields(cls):
    return [f for f in dataclasses.fields(cls) if f.name != "temporal"]


def _key_index() -> dict[str, str]:
    index: dict[str, str] = {}
    for section, cls in _SECTIONS.items():
        for f in _fields(cls):
            if f.name in index:
                raise RuntimeError(f"config key {f.name!r} defined twice")
            index[f.name] = section
    return index


KEYS = _key_index()

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def _parse_value(key: str, text: str, like):
    try:
        if isinstance(like, bool):
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if isinstance(like, int):
            return int(text)
        if isinstance(like, float):
            return float(text)
        if isinstance(like, tuple):
            items = [v.strip() for v in text.split(",") if v.strip()]
            conv = int if like and all(isinstance(v, int) for v in like) else float
            return tuple(conv(v) for v in items)
        return text
    except ValueError as err:
        raise ConfigError(f"bad value for {key}: {err}") from err


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(repr(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    augment: AugmentationConfig = field(default_factory=AugmentationConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)

    def section(self, name: str):
        return self.sampler.temporal if name == "temporal" else getattr(self, name)

    def echo(self) -> str:
        """Canonical text form; ``parse_config(cfg.echo())`` reproduces ``cfg``."""
        lines = []
        for section in _SECTIONS:
            obj = self.section(section)
            for f in _fields(type(obj)):
                lines.append(f"{f.name} = {_format_value(getattr(obj, f.name))}")
        return "\n".join(lines) + "\n"


def parse_config(text: str, overrides: dict | None = None) -> RunConfig:
    values: dict[str, dict] = {s: {} for s in _SECTIONS}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        section = KEYS[key]
        like = next(f for f in _fields(_SECTIONS[section]) if f.name == key)
        default = like.default if like.default is not dataclasses.MISSING else like.default_factory()
        values[section][key] = _parse_value(key, val, default)
    for key, val in (overrides or {}).items():
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}")
        values[KEYS[key]][key] = val
    try:
        temporal = TemporalConfig(**values["temporal"])
        return RunConfig(
            train=TrainConfig(**values["train"]),
            model=ModelConfig(**values["model"]),
            augment=AugmentationConfig(**values["augment"]),
            sampler=SamplerConfig(temporal=temporal, **values["sampler"]),
        )
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from err


def load_config(path, overrides: dict | None = None) -> RunConfig:
    return parse_config(Path(path).read_text(), overrides)
