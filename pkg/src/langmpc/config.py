"""Flat TOML-style configuration: [section] headers and key = value lines.

Values are quoted strings, booleans (true/false), integers, or floats; keys are
exposed as "section.key". A packaged defaults file carries every tunable
numeric default; a user file and explicit overrides layer on top of it.
"""
from __future__ import annotations

import importlib.resources

ConfigDict = dict[str, object]


class ConfigError(ValueError):
    pass


def _parse_value(raw: str, where: str):
    raw = raw.strip()
    if not raw:
        raise ConfigError(f"empty value at {where}")
    if raw.startswith('"'):
        if not raw.endswith('"') or len(raw) < 2:
            raise ConfigError(f"unterminated string at {where}")
        return raw[1:-1]
    if raw == "true":
        return True
    if raw == "false":
        return False
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"cannot parse value {raw!r} at {where}") from None


def parse_config_text(text: str) -> ConfigDict:
    out: ConfigDict = {}
    section = ""
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ConfigError(f"bad section header on line {lineno}")
            section = stripped[1:-1].strip()
            if not section:
                raise ConfigError(f"empty section name on line {lineno}")
            continue
        if "=" not in stripped:
            raise ConfigError(f"expected key = value on line {lineno}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"empty key on line {lineno}")
        # strip an inline comment, but never inside a quoted string
        value = value.strip()
        if not value.startswith('"') and "#" in value:
            value = value.split("#", 1)[0].strip()
        full_key = f"{section}.{key}" if section else key
        out[full_key] = _parse_value(value, f"line {lineno}")
    return out


def load_config(path: str) -> ConfigDict:
    with open(path) as f:
        return parse_config_text(f.read())


def default_config() -> ConfigDict:
    text = importlib.resources.files("langmpc").joinpath(
        "data/default_config.toml").read_text()
    return parse_config_text(text)


def merged_config(path: str | None = None,
                  overrides: ConfigDict | None = None) -> ConfigDict:
    cfg = default_config()
    if path:
        user = load_config(path)
        unknown = set(user) - set(cfg)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(user)
    if overrides:
        cfg.update({k: v for k, v in overrides.items() if v is not None})
    return cfg
