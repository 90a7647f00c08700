"""Run configuration: an INI file whose keys can all be overridden from the CLI.

Example::

    [paths]
    pois = city/pois.jsonl
    aps = city/aps.jsonl
    out_dir = run

    [sim]
    citizens = 100
    weeks = 2
    seed = 1

Relative paths are resolved against the config file's directory.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

from .errors import ConfigError

SECTIONS = {
    "paths": ("pois", "aps", "out_dir"),
    "sim": ("citizens", "weeks", "seed", "bandwidth", "master_key"),
    "pipeline": ("t_gap", "orders", "batch"),
    "control": ("top_k", "l_hit", "l_miss", "ttl", "capacity"),
    "serve": ("port", "serve_check"),
}


@dataclass
class RunConfig:
    pois: Path | None = None
    aps: Path | None = None
    out_dir: Path = Path("run")
    citizens: int = 100
    weeks: int = 2
    seed: int = 1
    bandwidth: float = 400.0
    master_key: str = "seer-demo-key"
    t_gap: int = 300
    orders: int = 3
    batch: int = 1
    top_k: int = 1
    l_hit: float = 5.0
    l_miss: float = 50.0
    ttl: int | None = None
    capacity: int = 1024
    port: int = 0
    serve_check: bool = True

    @property
    def effective_ttl(self) -> int:
        return self.t_gap if self.ttl is None else self.ttl

    def validate(self) -> None:
        for name in ("pois", "aps"):
            value = getattr(self, name)
            if value is None:
                raise ConfigError(f"missing required path {name!r}")
            if not Path(value).is_file():
                raise ConfigError(f"{name} file not found: {value}")
        positive = ("citizens", "bandwidth", "t_gap", "orders", "batch", "top_k", "capacity")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)!r}")
        if self.weeks < 2:
            raise ConfigError("weeks must be >= 2 (the last week is held out for evaluation)")
        if self.ttl is not None and self.ttl <= 0:
            raise ConfigError("ttl must be positive")
        if self.l_hit < 0 or self.l_miss < 0:
            raise ConfigError("latencies must be non-negative")
        if not self.master_key:
            raise ConfigError("master_key must not be empty")
        if not 0 <= self.port <= 65535:
            raise ConfigError("port out of range")


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(name: str, raw: str) -> Any:
    kind = _TYPES[name]
    try:
        if name in ("pois", "aps", "out_dir"):
            return Path(raw)
        if name == "serve_check":
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if name == "ttl":
            return None if raw.strip().lower() in ("", "none") else int(raw)
        if "int" in str(kind):
            return int(raw)
        if "float" in str(kind):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {name!r}: {raw!r}") from None
    return raw


def load_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> RunConfig:
    values: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        parser = configparser.ConfigParser()
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except configparser.Error as exc:
            raise ConfigError(f"bad config {path}: {exc}") from None
        for section in parser.sections():
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}]")
            for key, raw in parser.items(section):
                if key not in SECTIONS[section]:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
                value = _convert(key, raw)
                if isinstance(value, Path) and not value.is_absolute():
                    value = path.parent / value
                values[key] = value
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _TYPES:
            raise ConfigError(f"unknown setting {key!r}")
        values[key] = _convert(key, value) if isinstance(value, str) else value
    return RunConfig(**values)


def dump_config(config: RunConfig) -> str:
    lines = []
    for section, keys in SECTIONS.items():
        lines.append(f"[{section}]")
        for key in keys:
            value = getattr(config, key)
            lines.append(f"{key} = {'' if value is None else value}")
        lines.append("")
    return "\n".join(lines)
