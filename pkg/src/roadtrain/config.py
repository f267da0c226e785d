"""Scenario configuration: field validation and the key-value file format.

Files are plain ``key = value`` lines (``#`` comments allowed); nested fields
use dotted keys, e.g. ``medium.loss_max = 0.0`` or ``timers.hello_ms = 20``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Optional

from .medium import MediumConfig

VALID_MODES = ("rba", "mpr")
VALID_TRANSPORTS = ("inproc", "udp")
FOLLOWER_LENGTHS = (5.0, 10.0)
MAX_FOLLOWERS = 10


class ConfigError(ValueError):
    """Rejected scenario configuration."""


@dataclass
class TimerConfig:
    normal_ms: int = 10
    hello_ms: int = 20
    tc_ms: int = 30
    registry_read_ms: int = 50
    registry_write_s: int = 5


@dataclass
class ScenarioConfig:
    mode: str = "mpr"
    transport: str = "inproc"
    n_followers: int = 4
    duration_s: float = 300.0
    seed: int = 0
    medium: MediumConfig = field(default_factory=MediumConfig)
    timers: TimerConfig = field(default_factory=TimerConfig)
    scripted: bool = True
    follower_lengths: list[float] = field(default_factory=list)
    x_offset: float = 0.0
    leave_at_s: Optional[float] = None  # None: duration_s - 30 when positive
    echo_rate: int = 10
    follower_speed: float = 30.0
    keep_events: bool = False


def validate(cfg: ScenarioConfig) -> None:
    if cfg.mode not in VALID_MODES:
        raise ConfigError(f"mode must be one of {VALID_MODES}, got {cfg.mode!r}")
    if cfg.transport not in VALID_TRANSPORTS:
        raise ConfigError(f"transport must be one of {VALID_TRANSPORTS}")
    if not 1 <= cfg.n_followers <= MAX_FOLLOWERS:
        raise ConfigError(f"n_followers must be 1..{MAX_FOLLOWERS}, got {cfg.n_followers}")
    if cfg.duration_s <= 0:
        raise ConfigError("duration_s must be positive")
    for f in fields(TimerConfig):
        if getattr(cfg.timers, f.name) <= 0:
            raise ConfigError(f"timers.{f.name} must be positive")
    if cfg.follower_lengths and len(cfg.follower_lengths) != cfg.n_followers:
        raise ConfigError("follower_lengths must list one length per follower")
    for length in cfg.follower_lengths:
        if length not in FOLLOWER_LENGTHS:
            raise ConfigError(f"follower lengths must be in {FOLLOWER_LENGTHS}")
    if cfg.echo_rate < 1:
        raise ConfigError("echo_rate must be >= 1")
    if cfg.medium.range_m <= 0:
        raise ConfigError("medium.range_m must be positive")
    if not 0.0 <= cfg.medium.loss_max <= 1.0:
        raise ConfigError("medium.loss_max must be within [0, 1]")
    if cfg.follower_speed <= 0:
        raise ConfigError("follower_speed must be positive")


def follower_ids(cfg: ScenarioConfig) -> list[int]:
    return list(range(2, cfg.n_followers + 2))


def resolved_lengths(cfg: ScenarioConfig) -> list[float]:
    if cfg.follower_lengths:
        return list(cfg.follower_lengths)
    return [5.0] * cfg.n_followers


def effective_leave_at(cfg: ScenarioConfig) -> Optional[float]:
    leave = cfg.leave_at_s if cfg.leave_at_s is not None else cfg.duration_s - 30.0
    return leave if leave > 0 else None


_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def _parse_bool(value: str, key: str) -> bool:
    try:
        return _BOOL[value.lower()]
    except KeyError:
        raise ConfigError(f"{key} expects true/false, got {value!r}") from None


def _coerce(obj, name: str, value: str, key: str):
    current = getattr(obj, name)
    try:
        if isinstance(current, bool):
            return _parse_bool(value, key)
        if isinstance(current, int):
            return int(value)
        if isinstance(current, float):
            return float(value)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None
    return value


def parse_config(text: str) -> ScenarioConfig:
    cfg = ScenarioConfig()
    sections = {"medium": cfg.medium, "timers": cfg.timers}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        obj, name = cfg, key
        if "." in key:
            section, _, name = key.partition(".")
            obj = sections.get(section)
            if obj is None:
                raise ConfigError(f"line {lineno}: unknown section {section!r}")
        if not hasattr(obj, name) or name.startswith("_"):
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            if name == "leave_at_s":
                setattr(obj, name, None if value.lower() == "none" else float(value))
            elif name == "follower_lengths":
                setattr(obj, name, [float(v) for v in value.split(",") if v.strip()])
            else:
                setattr(obj, name, _coerce(obj, name, value, key))
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from exc
    validate(cfg)
    return cfg


def load_config(path: str) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())
