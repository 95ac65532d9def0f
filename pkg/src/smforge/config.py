"""Experiment configuration: one JSON document nesting every module config."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .baselines import CsConfig
from .core import Grid, check_scale
from .data import DatasetSpec
from .errors import ConfigError
from .losses import LossConfig
from .model import ModelConfig
from .recon import ReconConfig
from .sim import SimConfig
from .train import TrainConfig


def desk_sim() -> SimConfig:
    # desk profile: 100 samples per drive period keeps the 40th harmonic below Nyquist
    return SimConfig(samples_per_period=100, rows_per_channel=40)


@dataclass(frozen=True)
class ExperimentConfig:
    sim: SimConfig = field(default_factory=desk_sim)
    sim_noise_snr_db: float | None = None
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    loss: LossConfig = field(default_factory=lambda: LossConfig(data_range=(-1.0, 1.0)))
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    cs: CsConfig = field(default_factory=CsConfig)
    recon: ReconConfig = field(default_factory=ReconConfig)
    scale: int = 4
    seed: int = 0
    out: str = "out"

    def __post_init__(self):
        check_scale(self.scale)

    def resolved(self) -> "ExperimentConfig":
        """Propagate the top-level seed, scale and loss into the sub-configs."""
        r = dataclasses.replace
        return r(
            self,
            sim=r(self.sim, rng_seed=self.seed),
            dataset=r(self.dataset, seed=self.seed),
            model=r(self.model, rng_seed=self.seed, scale=self.scale, rim=self.train.rim_enabled),
            train=r(self.train, rng_seed=self.seed, loss=self.loss),
            recon=r(self.recon, seed=self.seed),
        )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["sim"] = self.sim.to_dict()
        d["train"].pop("loss")
        return d


_SECTIONS = {
    "sim": SimConfig, "dataset": DatasetSpec, "loss": LossConfig, "model": ModelConfig,
    "train": TrainConfig, "cs": CsConfig, "recon": ReconConfig,
}


def _build(cls, d: dict):
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(d) - set(names)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for k, v in d.items():
        if k == "fov" and isinstance(v, dict):
            v = Grid(**v)
        elif k == "loss" and isinstance(v, dict):
            v = _build(LossConfig, v)
        elif isinstance(v, list):
            v = tuple(v)
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(str(e)) from None


def from_dict(d: dict) -> ExperimentConfig:
    d = dict(d)
    kwargs = {}
    for key, value in d.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"section {key!r} must be an object")
            kwargs[key] = _build(_SECTIONS[key], value)
        elif key in ("sim_noise_snr_db", "scale", "seed", "out"):
            kwargs[key] = value
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return ExperimentConfig(**kwargs)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except ValueError:
        return text


def apply_overrides(d: dict, overrides: list[str]) -> dict:
    """Apply ``a.b=value`` strings to a nested dict (values parsed as JSON when possible)."""
    d = json.loads(json.dumps(d))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        node = d
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot descend into {p!r} in {key!r}")
        node[parts[-1]] = _parse_value(raw)
    return d


def load_config(path=None, overrides: list[str] | None = None) -> ExperimentConfig:
    d = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} does not exist")
        d = json.loads(p.read_text())
        if "config" in d and "format_version" in d:
            d = d["config"]  # a manifest: reuse its recorded configuration
    return from_dict(apply_overrides(d, overrides or []))
