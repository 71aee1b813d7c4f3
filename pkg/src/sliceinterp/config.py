"""Strict YAML experiment configs.

Unknown keys are rejected with their line number; the fully resolved config
is written next to every run's outputs.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .models import ModelConfig, desk_config, paper_config
from .training import TrainConfig, desk_train_config, paper_train_config, regime_of
from .volume import PhantomParams


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    source: str = "phantom"  # "phantom" or "directory"
    volume_dir: str | None = None
    n_volumes: int = 20
    phantom: dict = field(default_factory=dict)
    k: int = 1
    split_ratios: list = field(default_factory=lambda: [0.70, 0.15, 0.15])
    min_slices: int = 20
    seed: int | None = None


@dataclass
class EvalSection:
    eval_seed: int = 0
    split: str = "test"


@dataclass
class AblationSection:
    archs: list = field(default_factory=lambda: ["unet"])
    ks: list = field(default_factory=lambda: [1, 2])


@dataclass
class ExperimentConfig:
    seed: int = 0
    scale: str = "desk"
    output_dir: str = "runs/default"
    data: DataSection = field(default_factory=DataSection)
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    eval: EvalSection = field(default_factory=EvalSection)
    ablation: AblationSection = field(default_factory=AblationSection)

    # -- resolution -------------------------------------------------------------
    @property
    def data_seed(self) -> int:
        return self.seed if self.data.seed is None else self.data.seed

    def phantom_params(self) -> PhantomParams:
        return PhantomParams(**self.data.phantom)

    def model_config(self, arch: str | None = None) -> ModelConfig:
        arch = arch or self.model.get("arch")
        if arch is None:
            raise ConfigError("model.arch: required field missing")
        base = desk_config(arch) if self.scale == "desk" else paper_config(arch)
        overrides = {k: v for k, v in self.model.items() if k != "arch"}
        return dataclasses.replace(base, **overrides)

    def train_config(self, arch: str | None = None) -> TrainConfig:
        arch = arch or self.model.get("arch", "unet")
        preset = desk_train_config if self.scale == "desk" else paper_train_config
        base = preset(regime_of(arch))
        merged = {**dataclasses.asdict(base), "seed": self.seed, **self.train}
        return TrainConfig(**merged)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def resolved(self, arch: str | None = None) -> dict:
        """Config plus the concrete model/train settings the run actually used."""
        out = self.to_dict()
        out["data"]["seed"] = self.data_seed
        phantom = dataclasses.asdict(self.phantom_params())
        phantom.pop("seed")  # per-volume seeds derive from data.seed
        out["data"]["phantom"] = phantom
        arch = arch or self.model.get("arch")
        if arch is not None:
            out["model"] = self.model_config(arch).to_dict()
            out["train"] = dataclasses.asdict(self.train_config(arch))
        return out

    def write_resolved(self, directory, arch: str | None = None) -> Path:
        path = Path(directory) / "resolved_config.yaml"
        path.write_text(yaml.safe_dump(self.resolved(arch), sort_keys=True), newline="")
        return path


_SECTIONS = {"data": DataSection, "eval": EvalSection, "ablation": AblationSection}
_TOP = {f.name for f in dataclasses.fields(ExperimentConfig)}
_MODEL_KEYS = {f.name for f in dataclasses.fields(ModelConfig)}
_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)}
_PHANTOM_KEYS = {f.name for f in dataclasses.fields(PhantomParams)} - {"seed"}


def _allowed(path: tuple[str, ...]) -> set[str] | None:
    if path == ():
        return _TOP
    if len(path) == 1:
        if path[0] in _SECTIONS:
            return {f.name for f in dataclasses.fields(_SECTIONS[path[0]])}
        return {"model": _MODEL_KEYS, "train": _TRAIN_KEYS}.get(path[0])
    if path == ("data", "phantom"):
        return _PHANTOM_KEYS
    return None


def _check_keys(node, source: str, path: tuple[str, ...] = ()) -> None:
    if not isinstance(node, yaml.MappingNode):
        return
    allowed = _allowed(path)
    for key_node, value_node in node.value:
        key = key_node.value
        line = key_node.start_mark.line + 1
        if allowed is not None and key not in allowed:
            where = ".".join(path) or "top level"
            raise ConfigError(f"{source}:{line}: unknown key '{key}' in {where}")
        _check_keys(value_node, source, path + (key,))


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    if root is None:
        raise ConfigError(f"{source}: empty config")
    if not isinstance(root, yaml.MappingNode):
        raise ConfigError(f"{source}:1: config must be a mapping")
    _check_keys(root, source)
    raw = yaml.safe_load(text)
    try:
        sections = {name: cls(**(raw.get(name) or {})) for name, cls in _SECTIONS.items()}
        cfg = ExperimentConfig(
            **{k: v for k, v in raw.items() if k not in _SECTIONS}, **sections
        )
    except TypeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    if cfg.scale not in ("desk", "paper"):
        raise ConfigError(f"{source}: scale must be 'desk' or 'paper', got {cfg.scale!r}")
    if cfg.data.source not in ("phantom", "directory"):
        raise ConfigError(f"{source}: data.source must be 'phantom' or 'directory'")
    if cfg.data.source == "directory" and not cfg.data.volume_dir:
        raise ConfigError(f"{source}: data.volume_dir required when data.source is 'directory'")
    if cfg.eval.split not in ("train", "val", "test"):
        raise ConfigError(f"{source}: eval.split must be train, val or test, got {cfg.eval.split!r}")
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc}") from exc
    return parse_config(text, str(path))
