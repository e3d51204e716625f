"""Run configuration: one nested dataclass tree, JSON-loadable, with a
stable digest so every artifact can be attributed to its exact settings."""

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from .losses import LossFlags, LossWeights, RegConfig, SsimConfig
from .model import Strategy


@dataclass
class ModelConfig:
    strategy: str = "S3"
    depth: int = 7
    base_width: int = 64
    enhancer_sees_reflectance: bool = False

    def strategy_enum(self):
        return Strategy[self.strategy]


@dataclass
class LossConfig:
    weights: LossWeights = field(default_factory=LossWeights)
    flags: LossFlags = field(default_factory=LossFlags)
    reg: RegConfig = field(default_factory=RegConfig)
    ssim: SsimConfig = field(default_factory=SsimConfig)
    tie_factor: str = "I"  # "R" selects the analysis-consistent preset


@dataclass
class OptimConfig:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 16
    max_steps: int = 1000
    lr_milestones: list = field(default_factory=list)  # [[step, factor], ...]
    checkpoint_every: int = 500

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("betas must lie in [0, 1)")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")


@dataclass
class DataConfig:
    levels: list = field(default_factory=lambda: [0.1, 0.3, 0.5, 0.7, 0.9, 1.0])
    height: int = 256
    width: int = 384
    split_ratio: float = 1550.0 / 1767.0
    read_sigma: float = 0.01
    shot_factor: float = 0.02


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    data: DataConfig = field(default_factory=DataConfig)
    seed: int = 0
    deterministic: bool = True

    def digest(self):
        canon = json.dumps(dataclasses.asdict(self), sort_keys=True)
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _build(cls, obj, path):
    """Recursively construct a dataclass from plain dicts, rejecting
    unknown keys with a precise location."""
    if not dataclasses.is_dataclass(cls):
        return obj
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(obj) - set(fields)
    if unknown:
        raise ValueError(f"unknown config keys at {path or '<root>'}: {sorted(unknown)}")
    kwargs = {}
    for name, value in obj.items():
        ftype = fields[name].type
        target = _FIELD_TYPES.get((cls, name))
        if target is not None and isinstance(value, dict):
            kwargs[name] = _build(target, value, f"{path}.{name}")
        else:
            kwargs[name] = value
    return cls(**kwargs)


_FIELD_TYPES = {
    (RunConfig, "model"): ModelConfig,
    (RunConfig, "loss"): LossConfig,
    (RunConfig, "optim"): OptimConfig,
    (RunConfig, "data"): DataConfig,
    (LossConfig, "weights"): LossWeights,
    (LossConfig, "flags"): LossFlags,
    (LossConfig, "reg"): RegConfig,
    (LossConfig, "ssim"): SsimConfig,
}


def config_from_dict(obj):
    return _build(RunConfig, obj, "")


def load_config(path):
    with open(path) as fh:
        return config_from_dict(json.load(fh))


def apply_overrides(cfg, overrides):
    """Apply dotted-path overrides like {'optim.lr': 1e-3} to a RunConfig."""
    for dotted, value in overrides.items():
        parts = dotted.split(".")
        target = cfg
        for part in parts[:-1]:
            if not hasattr(target, part):
                raise ValueError(f"unknown config path {dotted!r}")
            target = getattr(target, part)
        if not hasattr(target, parts[-1]):
            raise ValueError(f"unknown config path {dotted!r}")
        setattr(target, parts[-1], value)
    return cfg
