"""Flat ``key = value`` config files with one section per module.

Values are coerced to the type of the dataclass default, so the same code
reads files, ``--set section.key=value`` overrides and checkpoint blobs.
"""

from __future__ import annotations

import configparser
import dataclasses


class ConfigError(ValueError):
    pass


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(text, default, key):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            parts = [p for p in text.replace(",", " ").split() if p]
            kind = type(default[0]) if default else int
            return tuple(kind(p) for p in parts)
        if default is None or isinstance(default, str):
            return text
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {type(default).__name__}") from None
    raise ConfigError(f"{key}: unsupported field type {type(default).__name__}")


def _format(value):
    if isinstance(value, bool):
        return "on" if value else "off"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return "" if value is None else str(value)


def update_dataclass(obj, values, section):
    """Return a copy of ``obj`` with string ``values`` coerced onto its fields."""
    fields = {f.name: f for f in dataclasses.fields(obj)}
    changes = {}
    for key, text in values.items():
        if key not in fields:
            raise ConfigError(f"unknown key {section}.{key}")
        default = getattr(obj, key)
        if dataclasses.is_dataclass(default):
            raise ConfigError(f"{section}.{key} is a section, not a value")
        changes[key] = _coerce(text, default, f"{section}.{key}")
    return dataclasses.replace(obj, **changes)


def read_sections(path=None, text=None):
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        if text is not None:
            parser.read_string(text)
        elif path is not None:
            with open(path) as f:
                parser.read_file(f)
    except configparser.Error as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from None
    return {name: dict(parser[name]) for name in parser.sections()}


def parse_overrides(items):
    """``["train.epochs=3", ...]`` -> {"train": {"epochs": "3"}}."""
    out = {}
    for item in items or ():
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        key, value = item.split("=", 1)
        section, name = key.strip().split(".", 1)
        out.setdefault(section, {})[name] = value
    return out


def merge(*dicts):
    out = {}
    for d in dicts:
        for section, values in d.items():
            out.setdefault(section, {}).update(values)
    return out


def dump_sections(sections):
    """Deterministic text for {section: dataclass or dict}."""
    lines = []
    for name, obj in sections.items():
        lines.append(f"[{name}]")
        items = dataclasses.asdict(obj).items() if dataclasses.is_dataclass(obj) else obj.items()
        for key, value in items:
            if isinstance(value, dict):
                continue
            lines.append(f"{key} = {_format(value)}")
        lines.append("")
    return "\n".join(lines)
