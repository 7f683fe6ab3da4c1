"""Run configuration, loadable from JSON or YAML."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional


class ConfigError(ValueError):
    pass


@dataclass
class RLConfig:
    alpha: float = 0.1
    gamma: float = 0.9
    epsilon: float = 0.1
    epsilon_final: float = 0.01
    t_initial: float = 5.0
    t_max: float = 50.0
    fr_bins: int = 8
    pn_bins: tuple = (0, 1, 2, 3, 4, 6, 9, 16)


@dataclass
class SimConfig:
    node_count: int = 200
    bw_min: float = 50_000.0
    bw_max: float = 5_000_000.0
    delay_min: float = 0.010
    delay_max: float = 0.600
    block_interval: float = 30.0
    block_size: int = 1_000_000
    w_min: int = 30
    w_max: int = 60
    initial_connections: int = 2
    seed: int = 1
    exploration_seed: Optional[int] = None
    duration_blocks: int = 500
    warmup_blocks: int = 300
    test_broadcasts: int = 30
    test_size: int = 1_000_000
    tx_per_interval: tuple = (1, 3)
    tx_size: tuple = (200, 400)
    tx_mode: str = "analytic"
    visibility_delay: float = 0.0
    probe_size: int = 10_000
    literal_r_formula: bool = False
    max_peers: int = 8
    baseline_max_peers: int = 40
    dns_min: int = 3
    dns_max: int = 5
    baseline_traffic: bool = False
    chunk_parts: int = 100
    rl: RLConfig = field(default_factory=RLConfig)

    def validate(self) -> "SimConfig":
        if self.node_count < 4:
            raise ConfigError("node_count must be at least 4")
        if not 0 <= self.warmup_blocks < self.duration_blocks:
            raise ConfigError("warmup_blocks must be below duration_blocks")
        if self.test_size < 1 or self.block_size < 1:
            raise ConfigError("payload sizes must be positive")
        if not 0 < self.bw_min <= self.bw_max:
            raise ConfigError("bandwidth range is invalid")
        if not 0 <= self.delay_min <= self.delay_max:
            raise ConfigError("delay range is invalid")
        if not 1 <= self.w_min <= self.w_max:
            raise ConfigError("window range is invalid")
        if self.tx_mode not in ("analytic", "event", "off"):
            raise ConfigError(f"unknown tx_mode {self.tx_mode!r}")
        if self.chunk_parts < 1:
            raise ConfigError("chunk_parts must be >= 1")
        if self.tx_size[1] > 500:
            raise ConfigError("transactions above 500 bytes would be split")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "SimConfig":
        rl_changes = changes.pop("rl", None)
        cfg = dataclasses.replace(self, **changes)
        if rl_changes:
            cfg.rl = dataclasses.replace(cfg.rl, **rl_changes)
        return cfg


def _coerce(cls, data: dict):
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {}
    for k, v in data.items():
        if k == "rl" and cls is SimConfig:
            v = _coerce(RLConfig, v or {})
        elif isinstance(v, list):
            v = tuple(v)
        kwargs[k] = v
    return cls(**kwargs)


def from_dict(data: dict) -> SimConfig:
    return _coerce(SimConfig, dict(data)).validate()


def load_config(path) -> SimConfig:
    path = Path(path)
    text = path.read_text()
    if path.suffix in (".yaml", ".yml"):
        import yaml

        data = yaml.safe_load(text) or {}
    else:
        data = json.loads(text)
    return from_dict(data)


def parse_value(raw: str) -> Any:
    """Best-effort parse of a command-line override value."""
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_override(cfg: SimConfig, key: str, value: Any) -> SimConfig:
    if key.startswith("rl."):
        return cfg.replace(rl={key[3:]: value}).validate()
    if key not in {f.name for f in dataclasses.fields(SimConfig)}:
        raise ConfigError(f"unknown config key {key!r}")
    if isinstance(value, list):
        value = tuple(value)
    return cfg.replace(**{key: value}).validate()
