"""
Experiment config files.

A config is one JSON document whose sections map onto the dataclasses in
``models.py``::

    {"data": {...}, "tokenizer": {...}, "model": {...}, "train": {...}, "output": {...}}

Missing sections and keys fall back to the dataclass defaults (the champion
run); unknown keys are rejected. Command-line values are applied on top with
:func:`apply_overrides`.
"""
import json
import logging
from dataclasses import fields, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union, get_args, get_origin, get_type_hints

from artifacts import write_json
from errors import ConfigError
from models import DataConfig, ExperimentConfig, ModelConfig, OutputConfig, TokenizerConfig, TrainConfig

logger = logging.getLogger(__name__)

SECTIONS = {
    "data": DataConfig,
    "tokenizer": TokenizerConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "output": OutputConfig,
}


def _matches(value: Any, annotation: Any) -> bool:
    """Whether a JSON value fits a dataclass field annotation."""
    origin = get_origin(annotation)
    if origin is Union:
        return any(_matches(value, arg) for arg in get_args(annotation))
    if origin in (list, tuple):
        item = get_args(annotation)[0]
        return isinstance(value, (list, tuple)) and all(_matches(v, item) for v in value)
    if annotation is type(None):
        return value is None
    if annotation is bool:
        return isinstance(value, bool)
    if annotation is int:
        return isinstance(value, int) and not isinstance(value, bool)
    if annotation is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if annotation is str:
        return isinstance(value, str)
    return True


def _check_types(name: str, values: Mapping[str, Any]) -> None:
    hints = get_type_hints(SECTIONS[name])
    for key, value in values.items():
        if not _matches(value, hints[key]):
            expected = getattr(hints[key], "__name__", hints[key])
            raise ConfigError(f"{name}.{key}: expected {expected}, got {value!r}")


def _section(name: str, payload: Any):
    cls = SECTIONS[name]
    if not isinstance(payload, Mapping):
        raise ConfigError(f"config section {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(payload) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(f'{name}.{key}' for key in unknown)}")
    _check_types(name, payload)
    try:
        return cls(**payload)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config section {name!r}: {exc}") from exc


def config_from_dict(payload: Mapping[str, Any]) -> ExperimentConfig:
    """Build an ExperimentConfig from a parsed document."""
    if not isinstance(payload, Mapping):
        raise ConfigError("config file must contain a JSON object")
    unknown = sorted(set(payload) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    sections = {name: _section(name, payload.get(name, {})) for name in SECTIONS}
    return ExperimentConfig(**sections)


def load_config(path: Optional[str] = None) -> ExperimentConfig:
    """Read a config file, or return the defaults when ``path`` is None."""
    if path is None:
        return ExperimentConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    logger.debug("loaded config from %s", path)
    return config_from_dict(payload)


def apply_overrides(cfg: ExperimentConfig, overrides: Dict[str, Any]) -> ExperimentConfig:
    """Apply ``{"section.key": value}`` overrides; ``None`` values are skipped."""
    sections = {name: getattr(cfg, name) for name in SECTIONS}
    for dotted, value in overrides.items():
        if value is None:
            continue
        section, _, key = dotted.partition(".")
        if section not in sections or key not in {f.name for f in fields(SECTIONS[section])}:
            raise ConfigError(f"unknown config key: {dotted}")
        _check_types(section, {key: value})
        sections[section] = replace(sections[section], **{key: value})
    return ExperimentConfig(**sections)


def save_config(cfg: ExperimentConfig, path: Path) -> None:
    """Persist the effective config; :func:`load_config` on it reproduces the run."""
    write_json(Path(path), cfg.to_dict())
