"""Flat ``key = value`` config files for :class:`TrainConfig`."""

from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Dict, Iterable, Optional

from .errors import ConfigError
from .training import TrainConfig

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def valid_keys() -> list:
    return [f.name for f in dataclasses.fields(TrainConfig)]


def _coerce(key: str, raw: str, kind: type):
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if kind is int:
            if key == "refresh_period" and raw.lower() in {"inf", "never"}:
                return 0
            return int(raw)
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from None


def parse_pairs(lines: Iterable[str], source: str = "<config>") -> Dict[str, object]:
    types = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    kinds = {"int": int, "float": float, "bool": bool}
    out: Dict[str, object] = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in types:
            raise ConfigError(
                f"{source}:{lineno}: unknown key {key!r}; valid keys: {', '.join(valid_keys())}"
            )
        out[key] = _coerce(key, value, kinds[str(types[key])])
    return out


def build_config(values: Dict[str, object], base: Optional[TrainConfig] = None) -> TrainConfig:
    unknown = sorted(set(values) - set(valid_keys()))
    if unknown:
        raise ConfigError(f"unknown keys {unknown}; valid keys: {', '.join(valid_keys())}")
    merged = dataclasses.asdict(base or TrainConfig())
    merged.update(values)
    try:
        return TrainConfig(**merged)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> TrainConfig:
    path = Path(path)
    return build_config(parse_pairs(path.read_text(encoding="utf-8").splitlines(), str(path)))


def dump_config(config: TrainConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in dataclasses.asdict(config).items())
