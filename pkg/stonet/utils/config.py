"""
Configuration dataclasses and packaged profiles.

Every configuration type in the package derives from `Config`, which gives it
a strict `from_dict` (unknown keys are rejected, nested configs are built
recursively) and a JSON-ready `to_dict`. Profiles are YAML files shipped inside
the package under `profiles/` and read with `pkgutil`.
"""

import copy
import dataclasses
import pkgutil
import re
import typing
from typing import Any, Dict, Mapping, Optional

import yaml

from stonet.errors import ConfigError


@dataclasses.dataclass
class Config:

    @classmethod
    def from_dict(cls, data: Optional[Mapping[str, Any]] = None):
        if data is None:
            data = {}
        if not isinstance(data, Mapping):
            raise ConfigError(f'{cls.__name__}: expected a mapping, got {type(data).__name__}')
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f'{cls.__name__}: unknown keys {unknown}')

        hints = typing.get_type_hints(cls)
        kwargs = {}
        for key, value in data.items():
            hint = hints[key]
            if isinstance(hint, type) and issubclass(hint, Config):
                value = hint.from_dict(value)
            elif typing.get_origin(hint) is tuple and isinstance(value, list):
                value = tuple(value)
            kwargs[key] = value
        config = cls(**kwargs)
        config.validate()
        return config

    def validate(self):
        """ Raise `ConfigError` when an invariant does not hold. """

    def to_dict(self) -> Dict[str, Any]:
        return _jsonable(dataclasses.asdict(self))

    def merged(self, overrides: Optional[Mapping[str, Any]]):
        """ Return a new config with `overrides` deep-merged over this one. """
        if not overrides:
            return self
        return type(self).from_dict(deep_merge(self.to_dict(), overrides))


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def deep_merge(base: Mapping[str, Any], overrides: Mapping[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(dict(base))
    for key, value in overrides.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def require(condition: bool, message: str):
    if not condition:
        raise ConfigError(message)


DURATION_UNITS = {'s': 1.0, 'm': 60.0, 'h': 3600.0, 'd': 86400.0}


def parse_duration(text: str) -> float:
    """
    Seconds in a duration such as '1200', '1200s', '20m', '36h' or '1.5d'.

    :raises ConfigError: if `text` is not a positive duration
    """
    match = re.fullmatch(r'\s*(\d+(?:\.\d*)?|\.\d+)\s*([smhd]?)\s*', str(text))
    if match is None:
        raise ConfigError(f'bad duration {text!r}, expected e.g. 1200, 20m or 36h')
    seconds = float(match.group(1)) * DURATION_UNITS[match.group(2) or 's']
    require(seconds > 0, f'duration must be positive, got {text!r}')
    return seconds


def load_profile(name: str) -> Dict[str, Any]:
    """
    Load a packaged configuration profile.

    :param name: profile name, e.g. `desk`, `desk-lite` or `full`
    :return: the raw mapping, to be passed to a `Config.from_dict`
    """
    try:
        raw = pkgutil.get_data('stonet', f'profiles/{name}.yaml')
    except FileNotFoundError:
        raw = None
    if raw is None:
        raise ConfigError(f'unknown profile {name!r}')
    return yaml.load(raw, Loader=yaml.SafeLoader) or {}


def load_config_file(path) -> Dict[str, Any]:
    """ Read a JSON or YAML config file (JSON documents parse as YAML). """
    with open(path) as f:
        data = yaml.load(f, Loader=yaml.SafeLoader)
    if data is None:
        return {}
    if not isinstance(data, Mapping):
        raise ConfigError(f'{path}: top level must be a mapping')
    return data
