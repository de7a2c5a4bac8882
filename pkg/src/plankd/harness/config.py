"""Flat ``key = value`` run configuration shared by every subcommand."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace

from ..scenario.types import GenParams
from ..trainer import DistillConfig

SEED_ENV = "PLANKD_SEED"
SEED_KEYS = ("data_seed", "init_seed", "train_seed")


class ConfigError(ValueError):
    """A config file that cannot be parsed or names an unknown key."""


@dataclass(frozen=True)
class RunConfig:
    distill: DistillConfig = field(default_factory=DistillConfig)
    gen: GenParams = field(default_factory=GenParams)

    def as_dict(self) -> dict:
        out = {f.name: getattr(self.gen, f.name) for f in fields(self.gen)}
        out.update(self.distill.as_dict())
        return out

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in sorted(self.as_dict().items()))


def _coerce(key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {type(default).__name__}") from None
    return raw


def parse_config(text: str) -> dict[str, str]:
    """Raw key/value pairs; blank lines and ``#`` comments are skipped."""
    out: dict[str, str] = {}
    for n, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        key, sep, value = body.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"line {n}: expected 'key = value', got {line.strip()!r}")
        out[key.strip()] = value.strip()
    return out


def build_config(pairs: dict[str, str], env: dict[str, str] | None = None) -> RunConfig:
    env = os.environ if env is None else env
    d_defaults = DistillConfig().as_dict()
    g_defaults = {f.name: getattr(GenParams(), f.name) for f in fields(GenParams)}
    d_kw, g_kw = {}, {}
    for key, raw in pairs.items():
        if key not in d_defaults and key not in g_defaults:
            raise ConfigError(f"unknown config key {key!r}")
        if key in d_defaults:
            d_kw[key] = _coerce(key, raw, d_defaults[key])
        if key in g_defaults:
            g_kw[key] = _coerce(key, raw, g_defaults[key])
    if env.get(SEED_ENV):
        seed = _coerce(SEED_ENV, env[SEED_ENV], 0)
        d_kw.update({k: seed for k in SEED_KEYS})
    cfg = RunConfig(replace(DistillConfig(), **d_kw), replace(GenParams(), **g_kw))
    try:
        cfg.distill.validate()
        cfg.gen.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path=None, env: dict[str, str] | None = None) -> RunConfig:
    if path is None:
        return build_config({}, env)
    with open(path, encoding="utf-8") as fh:
        return build_config(parse_config(fh.read()), env)
