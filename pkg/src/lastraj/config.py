"""Flat ``section.key = value`` configuration files.

Blank lines and lines starting with ``#`` are ignored. Values stay strings
until a typed getter converts them, so a missing or malformed key is
reported by name at the point of use.
"""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigError

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


class Config:
    def __init__(self, values: dict | None = None, source: str = "<memory>", base_dir=None):
        self.values = dict(values or {})
        self.source = source
        self.base_dir = Path(base_dir) if base_dir is not None else Path.cwd()

    @classmethod
    def parse(cls, text: str, source: str = "<memory>", base_dir=None) -> "Config":
        values = {}
        for n, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{n}: expected 'section.key = value', got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if "." not in key or not all(key.split(".")):
                raise ConfigError(f"{source}:{n}: key {key!r} must look like section.key")
            if key in values:
                raise ConfigError(f"{source}:{n}: duplicate key {key!r}")
            values[key] = value
        return cls(values, source, base_dir)

    @classmethod
    def load(cls, path) -> "Config":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.parse(text, str(path), path.parent)

    def __contains__(self, key):
        return key in self.values

    def set(self, key: str, value) -> None:
        self.values[key] = str(value)

    def raw(self, key: str, default=None) -> str:
        if key in self.values:
            return self.values[key]
        if default is None:
            raise ConfigError(f"missing config key '{key}' in {self.source}")
        return str(default)

    def _convert(self, key, default, convert, kind):
        text = self.raw(key, default)
        try:
            return convert(text)
        except ValueError:
            raise ConfigError(f"config key '{key}': expected {kind}, got {text!r}") from None

    def get_str(self, key: str, default=None) -> str:
        return self.raw(key, default)

    def get_int(self, key: str, default=None) -> int:
        return self._convert(key, default, int, "an integer")

    def get_float(self, key: str, default=None) -> float:
        return self._convert(key, default, float, "a number")

    def get_bool(self, key: str, default=None) -> bool:
        def convert(text):
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(text)
        return self._convert(key, None if default is None else str(default).lower(), convert, "a boolean")

    def get_floats(self, key: str, default=None) -> tuple:
        return self._convert(key, default, lambda t: tuple(float(v) for v in t.split(",") if v.strip()),
                             "a comma-separated list of numbers")

    def get_path(self, key: str, default=None) -> Path:
        path = Path(self.raw(key, default))
        return path if path.is_absolute() else self.base_dir / path

    def resolved(self) -> dict:
        return dict(sorted(self.values.items()))

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in sorted(self.values.items()))
