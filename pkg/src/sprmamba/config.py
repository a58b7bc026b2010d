"""Plain ``key = value`` run configuration.

Keys are prefixed by section: ``model.*`` (:class:`ModelConfig`),
``train.*`` (:class:`TrainConfig`) and ``synth.*`` (:class:`SynthConfig`).
Blank lines and ``#`` comments are ignored; list values are comma separated.
Unknown keys are rejected, missing keys fall back to the dataclass defaults
(each one is logged).
"""

from __future__ import annotations

import dataclasses
import logging
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .data import SynthConfig
from .exceptions import ConfigurationError
from .model import ModelConfig
from .training import TrainConfig

logger = logging.getLogger(__name__)

SECTIONS = {"model": ModelConfig, "train": TrainConfig, "synth": SynthConfig}
SEED_ENV = "SPRM_SEED"


def _parse_value(text: str, annotation, key: str):
    text = text.strip()
    origin = typing.get_origin(annotation)
    args = typing.get_args(annotation)
    try:
        if origin is list:
            return [_parse_value(part, args[0], key) for part in text.split(",") if part.strip()]
        if origin is typing.Union or type(None) in args:
            if text.lower() in ("none", ""):
                return None
            return _parse_value(text, next(a for a in args if a is not type(None)), key)
        if annotation is bool:
            lowered = text.lower()
            if lowered in ("true", "1", "yes", "on"):
                return True
            if lowered in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if annotation is int:
            return int(text)
        if annotation is float:
            return float(text)
        return text
    except (ValueError, StopIteration):
        raise ConfigurationError(f"{key}: cannot parse {text!r} as {annotation}") from None


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ", ".join(_format_value(v) for v in value)
    if value is None:
        return "none"
    return repr(value) if isinstance(value, float) else str(value)


def _hints(cls) -> dict:
    return typing.get_type_hints(cls)


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    explicit: frozenset = frozenset()

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "RunConfig":
        values: dict[str, dict] = {name: {} for name in SECTIONS}
        seen = set()
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            section, _, name = key.partition(".")
            if section not in SECTIONS or not name:
                raise ConfigurationError(f"{source}:{lineno}: unknown key {key!r}")
            hints = _hints(SECTIONS[section])
            if name not in hints or name not in {f.name for f in dataclasses.fields(SECTIONS[section])}:
                raise ConfigurationError(f"{source}:{lineno}: unknown key {key!r}")
            if key in seen:
                raise ConfigurationError(f"{source}:{lineno}: duplicate key {key!r}")
            seen.add(key)
            values[section][name] = _parse_value(value, hints[name], key)
        built = {}
        for section, klass in SECTIONS.items():
            for f in dataclasses.fields(klass):
                if f.name not in values[section]:
                    default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
                    logger.info("config key %s.%s not set; using default %s", section, f.name, _format_value(default))
            built[section] = klass(**values[section])
        return cls(built["model"], built["train"], built["synth"], frozenset(seen))

    @classmethod
    def load(cls, path) -> "RunConfig":
        if path is None:
            return cls.from_text("", "<defaults>")
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
        return cls.from_text(text, str(path))

    def to_text(self) -> str:
        lines = []
        for section in SECTIONS:
            obj = getattr(self, section)
            for f in dataclasses.fields(obj):
                lines.append(f"{section}.{f.name} = {_format_value(getattr(obj, f.name))}")
        return "\n".join(lines) + "\n"

    def is_set(self, key: str) -> bool:
        return key in self.explicit

    def with_seed(self, seed: int | None) -> "RunConfig":
        """Apply a seed to every section (``SPRM_SEED`` wins over ``seed``)."""
        seed = resolve_seed(seed)
        if seed is None:
            return self
        return RunConfig(dataclasses.replace(self.model, seed=seed), dataclasses.replace(self.train, seed=seed),
                         dataclasses.replace(self.synth, seed=seed), self.explicit)


def resolve_seed(cli_seed: int | None) -> int | None:
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise ConfigurationError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return cli_seed
