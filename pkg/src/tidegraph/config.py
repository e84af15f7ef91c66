"""Run configuration: YAML loading, defaults, and canonical hashing."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import yaml

from .encoders import MteConfig
from .errors import ConfigError
from .events import SplitSpec
from .model import ModelConfig

__all__ = ["TrainConfig", "TraceSpec", "RunConfig", "load_config", "run_config_from_dict", "config_hash"]

_SETTING_ALIASES = {"trans": "transductive", "ind": "inductive"}


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 0.0
    epochs: int = 100
    patience: int = 20
    batch_size: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.patience < 1:
            raise ConfigError("patience must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")


@dataclass
class TraceSpec:
    """Attention tracing: which nodes count as keys and when to snapshot."""

    threshold: float = 150.0
    epochs: list[int] = field(default_factory=list)  # 0 = before training
    layer: int = -1
    probe_batches: int = 5

    def __post_init__(self):
        if self.threshold <= 0:
            raise ConfigError("trace threshold must be positive")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    nss: str = "random"
    setting: str = "transductive"
    trace: TraceSpec | None = None

    def __post_init__(self):
        self.setting = _SETTING_ALIASES.get(self.setting, self.setting)
        if self.setting not in ("transductive", "inductive"):
            raise ConfigError(f"setting must be transductive or inductive, got {self.setting!r}")

    def to_dict(self) -> dict:
        out = {
            "model": asdict(self.model),
            "train": asdict(self.train),
            "split": asdict(self.split),
            "nss": self.nss,
            "setting": self.setting,
        }
        if self.trace is not None:
            out["trace"] = asdict(self.trace)
        return out


def run_config_from_dict(raw: dict) -> RunConfig:
    raw = dict(raw or {})
    model_raw = dict(raw.get("model") or {})
    mte_raw = model_raw.pop("mte", None)
    if mte_raw is not None:
        model_raw["mte"] = MteConfig(**mte_raw)
    trace_raw = raw.get("trace")
    return RunConfig(
        model=ModelConfig(**model_raw),
        train=TrainConfig(**(raw.get("train") or {})),
        split=SplitSpec(**(raw.get("split") or {})),
        nss=raw.get("nss", "random"),
        setting=raw.get("setting", "transductive"),
        trace=TraceSpec(**trace_raw) if trace_raw else None,
    )


def load_config(path) -> RunConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be a mapping, got {type(raw).__name__}")
    try:
        return run_config_from_dict(raw)
    except TypeError as exc:
        raise ConfigError(f"bad config field: {exc}") from exc


def config_hash(cfg: RunConfig) -> str:
    canonical = json.dumps(cfg.to_dict(), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]
