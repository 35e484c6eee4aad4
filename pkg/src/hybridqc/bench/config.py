"""Experiment configuration: a single JSON file, every field defaulted."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ..attacks import ATTACKS
from ..exceptions import ConfigurationError

PAPER_EPSILONS = (0.05, 0.15, 0.25)


def _from_dict(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigurationError(f"{where}: expected an object, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigurationError(f"{where}: unknown keys {unknown}")
    return cls(**data)


@dataclass
class ModelSpec:
    computation_type: str = "hybrid"
    extractor: str = "cnn"
    template: int = 1
    hidden_dim: int = 16
    conv_channels: int = 8
    extractor_dim: int = 16


@dataclass
class TrainConfig:
    epochs: int = 15
    batch_size: int = 32
    learning_rate: float = 0.01
    optimizer: str = "adam"
    split: tuple[float, ...] = (0.8, 0.2)

    def __post_init__(self):
        self.split = tuple(float(r) for r in self.split)
        if len(self.split) not in (2, 3) or any(r <= 0 for r in self.split) or abs(sum(self.split) - 1) > 1e-9:
            raise ConfigurationError(f"split ratios must be 2 or 3 positive numbers summing to 1, got {self.split}")


@dataclass
class DataSpec:
    source: str = "synthetic"       # synthetic | directory | features
    count: int = 1000
    height: int = 16
    width: int = 16
    path: str | None = None

    def __post_init__(self):
        if self.source not in ("synthetic", "directory", "features"):
            raise ConfigurationError(f"data source must be synthetic, directory or features, got {self.source!r}")
        if self.source != "synthetic" and not self.path:
            raise ConfigurationError(f"data source {self.source!r} needs a path")


@dataclass
class AttackSweep:
    kinds: tuple[str, ...] = ("fgsm", "deepfool", "pgd")
    epsilons: tuple[float, ...] = PAPER_EPSILONS
    pgd_steps: int = 10
    pgd_alpha: float | None = None
    pgd_random_start: bool = False
    deepfool_max_iter: int = 50
    deepfool_overshoot: float = 0.02

    def __post_init__(self):
        self.kinds = tuple(k.lower() for k in self.kinds)
        self.epsilons = tuple(float(e) for e in self.epsilons)
        bad = [k for k in self.kinds if k not in ATTACKS]
        if bad:
            raise ConfigurationError(f"unknown attacks {bad}")
        if any(not e >= 0 for e in self.epsilons):
            raise ConfigurationError(f"epsilons must be >= 0, got {self.epsilons}")


@dataclass
class ExpressibilitySpec:
    samples: int = 5000
    bins: int = 75


@dataclass
class ExperimentConfig:
    name: str = "Hybrid CNN"
    seed: int = 0
    model: ModelSpec = field(default_factory=ModelSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataSpec = field(default_factory=DataSpec)
    attacks: AttackSweep = field(default_factory=AttackSweep)
    expressibility: ExpressibilitySpec = field(default_factory=ExpressibilitySpec)
    out: str = "runs/experiment"
    export_ppm: bool = False

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        parts = {"model": ModelSpec, "train": TrainConfig, "data": DataSpec,
                 "attacks": AttackSweep, "expressibility": ExpressibilitySpec}
        for key, sub in parts.items():
            if key in data:
                data[key] = _from_dict(sub, data[key], key)
        return _from_dict(cls, data, "config")

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except ValueError as exc:
            raise ConfigurationError(f"{path}: invalid JSON: {exc}") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"
