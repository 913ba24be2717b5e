"""
Configuration utilities.

Loads and validates run configuration from a TOML file with [train], [model]
and [loss] sections, and applies "section.key=value" overrides on top.
"""

import dataclasses
import tomllib
import typing
from pathlib import Path

from .errors import ConfigError

SECTIONS = ('train', 'model', 'loss')


def _check_type(value, expected, where):
    origin = typing.get_origin(expected) or expected
    if expected is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if expected is int and isinstance(value, bool):
        raise ConfigError(f"'{where}' must be an integer, got {value!r}")
    if origin is list and isinstance(value, (list, tuple)):
        return list(value)
    if isinstance(origin, type) and not isinstance(value, origin):
        raise ConfigError(f"'{where}' must be {origin.__name__}, got {type(value).__name__} {value!r}")
    return value


def _build(cls, data, where=''):
    """
    Build a (possibly nested) config dataclass from a plain dict.

    Args:
        cls: Dataclass type
        data: Mapping of field name -> value (nested dataclasses as mappings)
        where: Dotted prefix used in error messages

    Raises:
        ConfigError: On unknown keys, wrong value types or failed validation
    """
    if not isinstance(data, dict):
        raise ConfigError(f"'{where or cls.__name__}' must be a table")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        prefix = f"{where}." if where else ''
        raise ConfigError(f"Unknown config key(s): {', '.join(prefix + k for k in unknown)}")
    kwargs = {}
    for name, value in data.items():
        expected = hints[name]
        key = f"{where}.{name}" if where else name
        if dataclasses.is_dataclass(expected):
            kwargs[name] = _build(expected, value, key)
        else:
            kwargs[name] = _check_type(value, expected, key)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid configuration{f' in {where}' if where else ''}: {e}")


def config_from_dict(data, cls=None):
    """
    Build a TrainConfig from {"train": {...}, "model": {...}, "loss": {...}}.

    Raises:
        ConfigError: On unknown sections or keys, wrong types or failed validation
    """
    if cls is None:
        from .training import TrainConfig
        cls = TrainConfig
    unknown = sorted(set(data) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"Unknown config section(s): {', '.join(unknown)}")
    merged = dict(data.get('train', {}))
    for nested in ('model', 'loss'):
        if nested in merged:
            raise ConfigError(f"Use a [{nested}] section instead of train.{nested}")
        merged[nested] = data.get(nested, {})
    return _build(cls, merged)


def config_to_dict(config):
    """Inverse of config_from_dict: a plain, JSON- and TOML-ready section dict."""
    flat = dataclasses.asdict(config)
    return {'train': {k: v for k, v in flat.items() if k not in ('model', 'loss')},
            'model': flat['model'], 'loss': flat['loss']}


def load_config(config_path=None):
    """
    Load run configuration from file.

    Args:
        config_path: Path to a TOML file, or None for defaults

    Returns:
        TrainConfig instance

    Raises:
        ConfigError: If the file is missing, not valid TOML, or has unknown keys
    """
    if config_path is None:
        return config_from_dict({})
    config_file = Path(config_path)

    # Check file exists
    if not config_file.exists():
        raise ConfigError(
            f"Config not found: {config_file}\n"
            f"Start from config/pointcube.toml, which lists every key with its default."
        )

    # Load TOML
    try:
        with open(config_file, 'rb') as f:
            config_data = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"Invalid TOML in {config_file}: {e}")

    return config_from_dict(config_data)


def parse_override(text):
    """
    Parse "section.key=value"; the value is read as a TOML literal, else kept as a string.

    Returns:
        (section, key, value)
    """
    if '=' not in text:
        raise ConfigError(f"Override must look like section.key=value, got {text!r}")
    path, raw = text.split('=', 1)
    parts = path.strip().split('.')
    if len(parts) != 2 or parts[0] not in SECTIONS or not parts[1]:
        raise ConfigError(f"Override key must be one of {'|'.join(SECTIONS)}.<key>, got {path!r}")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")['v']
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return parts[0], parts[1], value


def apply_overrides(config, overrides):
    """Return a new config with every "section.key=value" override applied and re-validated."""
    sections = config_to_dict(config)
    for text in overrides or ():
        section, key, value = parse_override(text)
        sections[section][key] = value
    return config_from_dict(sections, type(config))
