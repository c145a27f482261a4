"""Experiment configuration: dataclasses mirrored by a YAML key/value file.

A config file has up to three sections, each optional::

    data:      {n_train: 500, n_test: 100, seed: 0, height: 64, width: 64, ...}
    dynamics:  {epochs: 30, batch_size: 8, hidden_channels: 32, ...}
    inpaint:   {epochs: 5, channels: [16, 32, 48, 64], ...}

Unknown keys are rejected so typos do not silently fall back to defaults.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .. import synthworld as sw


@dataclass
class LossWeights:
    alpha: float = 5.0  # boundary emphasis in the semantic loss
    beta: float = 0.1  # KL weight (stochastic dynamics only)
    perceptual: float = 2.0
    frame_adversarial: float = 2.0
    clip_adversarial: float = 1.0


@dataclass
class TrainConfig:
    stage: str = "dynamics"  # dynamics | inpaint
    learning_rate: float = 1e-3
    lr_decay: float = 0.8
    decay_every: int = 20
    batch_size: int = 8
    clip_length: int = 10
    observed_len: int = 5
    epochs: int = 30
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    checkpoint_every: int = 0  # 0 = only the final checkpoint
    time_budget: float | None = None
    # dynamics network
    hidden_channels: int = 32
    downsample: int = 4
    stochastic: bool = False
    single_class: bool = False
    context_channels: int = 16
    mlp_hidden: int = 64
    fusion_channels: int = 16
    # inpainting network
    channels: tuple[int, ...] = (16, 32, 48, 64)
    disc_channels: int = 16

    def __post_init__(self):
        if self.stage not in ("dynamics", "inpaint"):
            raise ValueError(f"stage must be 'dynamics' or 'inpaint', got {self.stage!r}")
        if not 0 < self.observed_len < self.clip_length:
            raise ValueError("need 0 < observed_len < clip_length")
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        self.channels = tuple(self.channels)

    @property
    def horizon(self) -> int:
        return self.clip_length - self.observed_len

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["channels"] = list(self.channels)
        return d


@dataclass
class DataConfig:
    n_train: int = 500
    n_test: int = 100
    seed: int = 0
    height: int = 64
    width: int = 64
    length: int = 10
    subpixel: bool = False
    pans: tuple[tuple[float, float], ...] = ((-1.0, 0.0), (0.0, 0.0), (1.0, 0.0))

    def __post_init__(self):
        self.pans = tuple(tuple(float(v) for v in p) for p in self.pans)

    def base_spec(self) -> sw.WorldSpec:
        spec = sw.default_world_spec(length=self.length)
        if (self.height, self.width) != (spec.height, spec.width) or self.subpixel:
            spec = dataclasses.replace(spec, height=self.height, width=self.width, subpixel=self.subpixel)
        return spec.validate()

    def make_split(self, split: str) -> sw.SynthDataset:
        if split == "train":
            n, seed = self.n_train, self.seed
        elif split == "test":
            n, seed = self.n_test, self.seed + 1_000_003
        else:
            raise ValueError(f"unknown split {split!r}")
        return sw.build_dataset(sw.sample_specs(n, seed, self.base_spec(), self.pans), split)

    def make_splits(self):
        return self.make_split("train"), self.make_split("test")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["pans"] = [list(p) for p in self.pans]
        return d


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    dynamics: TrainConfig = field(default_factory=lambda: TrainConfig(stage="dynamics"))
    inpaint: TrainConfig = field(default_factory=lambda: TrainConfig(stage="inpaint", epochs=5))

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Same config with every seed replaced."""
        return ExperimentConfig(
            dataclasses.replace(self.data, seed=seed),
            dataclasses.replace(self.dynamics, seed=seed),
            dataclasses.replace(self.inpaint, seed=seed),
        )

    def to_dict(self) -> dict:
        return {"data": self.data.to_dict(), "dynamics": self.dynamics.to_dict(), "inpaint": self.inpaint.to_dict()}


def _build(cls, values: dict | None, **defaults):
    values = dict(values or {})
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**{**defaults, **values})


def config_from_dict(d: dict | None) -> ExperimentConfig:
    d = dict(d or {})
    unknown = set(d) - {"data", "dynamics", "inpaint"}
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    return ExperimentConfig(
        data=_build(DataConfig, d.get("data")),
        dynamics=_build(TrainConfig, d.get("dynamics"), stage="dynamics"),
        inpaint=_build(TrainConfig, d.get("inpaint"), stage="inpaint", epochs=5),
    )


def load_config(path=None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    with open(path) as fh:
        return config_from_dict(yaml.safe_load(fh))


def save_config(config: ExperimentConfig, path) -> Path:
    path = Path(path)
    path.write_text(yaml.safe_dump(config.to_dict(), sort_keys=False))
    return path
