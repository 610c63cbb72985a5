"""Line-oriented `key = value` config files with optional [section] blocks.

Used for backbone definitions, training configs, and synthetic dataset
specs.  Blank lines and `#` comments are ignored; keys may not repeat
within a scope; section headers look like `[block]`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConfigError


@dataclass
class ConfigDocument:
    top: dict[str, str] = field(default_factory=dict)
    sections: list[tuple[str, dict[str, str]]] = field(default_factory=list)


def parse_kv_text(text: str, source: str = "<string>") -> ConfigDocument:
    doc = ConfigDocument()
    scope = doc.top
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if not name:
                raise ConfigError(f"{source}:{lineno}: empty section name")
            scope = {}
            doc.sections.append((name, scope))
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected `key = value`, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: missing key")
        if key in scope:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        scope[key] = value
    return doc


def load_kv_file(path) -> ConfigDocument:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_kv_text(fh.read(), source=str(path))


def check_keys(scope: dict[str, str], allowed, source: str) -> None:
    unknown = sorted(set(scope) - set(allowed))
    if unknown:
        raise ConfigError(f"{source}: unknown key(s): {', '.join(unknown)}")


_BOOL = {"yes": True, "true": True, "1": True,
         "no": False, "false": False, "0": False}


def as_bool(value: str, key: str) -> bool:
    try:
        return _BOOL[value.lower()]
    except KeyError:
        raise ConfigError(f"{key}: expected yes/no, got {value!r}") from None


def as_int(value: str, key: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {value!r}") from None


def as_float(value: str, key: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {value!r}") from None
