"""Run configuration, stored as JSON mirroring :class:`RunConfig`."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from ..errors import ConfigurationError
from ..losses import LossWeights
from ..proposal import DEFAULT_PROMPT
from ..rectifier import ScaleConfig, Toggles


@dataclass
class OptimConfig:
    lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.95
    weight_decay: float = 0.01


@dataclass
class BackendConfig:
    name: str = "toy"
    seed: int = 0
    options: dict[str, Any] = field(default_factory=dict)


@dataclass
class DataConfig:
    train_manifest: str | None = None
    val_manifest: str | None = None
    out_dir: str = "runs/default"


@dataclass
class RunConfig:
    seed: int = 0
    d: int = 256
    c: int = 64
    patch: int = 8
    heads: int = 8
    d_conv: int | None = None  # scale-conv width; None means d
    scales: list[list[int]] = field(default_factory=lambda: [[3, 1], [7, 1], [9, 2]])
    loss: LossWeights = field(default_factory=LossWeights)
    optim: OptimConfig = field(default_factory=OptimConfig)
    epochs: int = 20
    warmup_steps: int = 100
    validate_every: int = 2
    batch_size: int = 4
    max_steps: int | None = None
    toggles: Toggles = field(default_factory=Toggles)
    residual_norm: bool = True
    high_res: bool = True
    noise_width: int = 16
    backend: BackendConfig = field(default_factory=BackendConfig)
    prompt: str = DEFAULT_PROMPT
    data: DataConfig = field(default_factory=DataConfig)
    deterministic: bool = True
    dtype: str = "float32"
    mixed_precision: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        positive = {
            "d": self.d, "c": self.c, "patch": self.patch, "heads": self.heads, "epochs": self.epochs,
            "validate_every": self.validate_every, "batch_size": self.batch_size, "lr": self.optim.lr,
            "noise_width": self.noise_width,
        }
        for name, value in positive.items():
            if not value > 0:
                raise ConfigurationError(f"{name} must be positive, got {value}")
        if self.warmup_steps < 0:
            raise ConfigurationError("warmup_steps must be >= 0")
        if self.max_steps is not None and self.max_steps <= 0:
            raise ConfigurationError("max_steps must be positive when given")
        if not (0 <= self.optim.beta1 < 1 and 0 <= self.optim.beta2 < 1):
            raise ConfigurationError("betas must lie in [0, 1)")
        if self.optim.weight_decay < 0:
            raise ConfigurationError("weight_decay must be >= 0")
        if self.dtype not in ("float32", "float64"):
            raise ConfigurationError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.d % self.heads or self.c % self.heads:
            raise ConfigurationError(f"d={self.d} and c={self.c} must be divisible by heads={self.heads}")
        self.scale_configs()

    def scale_configs(self) -> tuple[ScaleConfig, ...]:
        if len(self.scales) != 3:
            raise ConfigurationError("exactly three rectification scales are supported")
        return tuple(ScaleConfig(int(k), int(dl), i + 1) for i, (k, dl) in enumerate(self.scales))

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        return _build(cls, raw, "config")

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from exc
        cfg = cls.from_dict(raw)
        # data paths in a config file are relative to the file
        base = Path(path).resolve().parent
        for key in ("train_manifest", "val_manifest", "out_dir"):
            value = getattr(cfg.data, key)
            if value is not None and not Path(value).is_absolute():
                setattr(cfg.data, key, str(base / value))
        return cfg


_NESTED = {"loss": LossWeights, "optim": OptimConfig, "toggles": Toggles, "backend": BackendConfig, "data": DataConfig}


def _build(cls, raw: Any, where: str):
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{where} must be a JSON object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigurationError(f"unknown keys in {where}: {sorted(unknown)}")
    kwargs = {}
    for key, value in raw.items():
        sub = _NESTED.get(key) if cls is RunConfig else None
        kwargs[key] = _build(sub, value, f"{where}.{key}") if sub is not None else value
    try:
        return cls(**kwargs)
    except ConfigurationError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"invalid {where}: {exc}") from exc
