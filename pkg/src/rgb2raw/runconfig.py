"""Run configuration files: YAML sections for data, model, training, diffusion,
sampling, and evaluation.

Missing keys are filled from the documented defaults; unknown sections or keys
are rejected. The fully resolved configuration is echoed into the run
directory so a run can be reproduced from its own artifacts.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .unet import ModelConfig


class RunConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    train_manifest: str | None = None
    generated_manifest: str | None = None
    p_gen: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.p_gen <= 1.0:
            raise RunConfigError(f"p_gen must be in [0, 1], got {self.p_gen}")


@dataclass
class TrainConfig:
    steps: int = 70000
    lr: float = 1e-4
    adam_betas: tuple = (0.9, 0.999)
    weight_decay: float = 0.0
    batch_size: int = 4
    patch_size: int = 256  # RGB pixels; the RAW pack patch is half this
    augment: bool = True
    seed: int = 0
    log_interval: int = 50
    checkpoint_interval: int = 10000
    strict_deterministic: bool = False
    use_mse: bool = True
    use_l1: bool = True
    use_logl1: bool = True
    log_eps: float = 1e-4

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise RunConfigError("steps and batch_size must be >= 1")
        if self.patch_size % 2:
            raise RunConfigError("patch_size must be even")
        if self.log_interval < 1 or self.checkpoint_interval < 1:
            raise RunConfigError("intervals must be >= 1")


@dataclass
class DiffusionConfig:
    timesteps: int = 1000
    beta_1: float = 1e-4
    beta_T: float = 0.02


@dataclass
class SamplingConfig:
    sampler: str = "ddim"
    steps: int = 6


@dataclass
class EvalConfig:
    grid: int = 3
    seed: int = 0


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        return {
            "data": asdict(self.data),
            "model": self.model.to_dict(),
            "training": {**asdict(self.training), "adam_betas": list(self.training.adam_betas)},
            "diffusion": asdict(self.diffusion),
            "sampling": asdict(self.sampling),
            "evaluation": asdict(self.evaluation),
        }


_SECTION_BUILDERS = {
    "data": DataConfig,
    "model": ModelConfig.from_dict,
    "training": TrainConfig,
    "diffusion": DiffusionConfig,
    "sampling": SamplingConfig,
    "evaluation": EvalConfig,
}


def _build_section(name: str, overrides: dict, defaults: dict):
    known = set(defaults)
    unknown = set(overrides) - known
    if unknown:
        raise RunConfigError(f"unknown keys in section {name!r}: {sorted(unknown)}")
    merged = {**defaults, **overrides}
    builder = _SECTION_BUILDERS[name]
    if name == "training":
        merged["adam_betas"] = tuple(merged["adam_betas"])
    if name == "model" and "time_embed_dim" not in overrides:
        merged["time_embed_dim"] = None  # re-derive from base_features
    try:
        return builder(**merged) if name != "model" else builder(merged)
    except (TypeError, ValueError) as e:
        raise RunConfigError(f"invalid section {name!r}: {e}") from e


def run_config_from_dict(doc: dict) -> RunConfig:
    doc = doc or {}
    default_doc = RunConfig().to_dict()
    unknown = set(doc) - set(default_doc)
    if unknown:
        raise RunConfigError(f"unknown config sections: {sorted(unknown)}")
    sections = {}
    for name, defaults in default_doc.items():
        overrides = doc.get(name) or {}
        if not isinstance(overrides, dict):
            raise RunConfigError(f"section {name!r} must be a mapping")
        sections[name] = _build_section(name, overrides, defaults)
    return RunConfig(**sections)


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as e:
        raise RunConfigError(f"cannot read config {path}: {e}") from e
    if doc is not None and not isinstance(doc, dict):
        raise RunConfigError(f"config root must be a mapping, got {type(doc).__name__}")
    return run_config_from_dict(doc)


def save_run_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
