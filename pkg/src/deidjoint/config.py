"""Sectioned ``key = value`` run configuration.

Sections map onto dataclasses: ``[train]`` -> TrainConfig, ``[model]`` ->
Dims, ``[gumbel]`` -> GumbelConfig.  Unknown sections or keys are errors.
Command-line flags override file values.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field

from .anonymize import GumbelConfig
from .models import Dims
from .training import TrainConfig

SECTIONS = {"train": TrainConfig, "model": Dims, "gumbel": GumbelConfig}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    model: Dims = field(default_factory=Dims)
    gumbel: GumbelConfig = field(default_factory=GumbelConfig)


def _coerce(raw: str, default):
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw.strip()


def _build(cls, values: dict[str, str]):
    defaults = cls()
    known = {f.name for f in dataclasses.fields(cls) if f.init}
    kwargs = {}
    for key, raw in values.items():
        if key not in known:
            raise ConfigError(f"unknown key {key!r} for [{_section_of(cls)}]")
        try:
            kwargs[key] = _coerce(raw, getattr(defaults, key))
        except ValueError as exc:
            raise ConfigError(f"[{_section_of(cls)}] {key}: {exc}") from None
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"[{_section_of(cls)}] {exc}") from None


def _section_of(cls) -> str:
    return next(k for k, v in SECTIONS.items() if v is cls)


def parse_config(text: str = "", overrides: dict[str, dict[str, str]] | None = None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    unknown = set(parser.sections()) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    merged = {name: dict(parser[name]) if parser.has_section(name) else {} for name in SECTIONS}
    for name, values in (overrides or {}).items():
        merged[name].update({k: str(v) for k, v in values.items()})
    return RunConfig(**{name: _build(cls, merged[name]) for name, cls in SECTIONS.items()})


def describe_defaults() -> str:
    lines = []
    for name, cls in SECTIONS.items():
        lines.append(f"[{name}]")
        d = cls()
        for f in dataclasses.fields(cls):
            if f.init:
                lines.append(f"  {f.name} = {getattr(d, f.name)}")
    return "\n".join(lines)
