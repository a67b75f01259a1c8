"""Run configuration: one JSON file describing every pipeline stage.

Schema-validated before any work; unknown keys are rejected at every level
so typos fail fast with exit code 2 rather than silently using defaults.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

from .dataset import DatasetConfig, config_hash
from .inference import MODES
from .model import ModelConfig, PROFILES
from .training import TrainConfig

STAGES = ("gen", "pretrain", "finetune", "infer", "eval", "report")


class ConfigError(ValueError):
    """Invalid run configuration (CLI exit code 2)."""


def _strict_fields(cls, d: dict, what: str) -> dict:
    known = set(cls.__dataclass_fields__)
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown {what} keys: {sorted(unknown)}")
    return d


@dataclass
class InferenceSection:
    steps: int = 1
    sample_rate: float = 0.05
    modes: list[str] = field(default_factory=lambda: list(MODES))
    max_eval_samples: int = 4
    split: str = "test"
    granularity: str = "patch"
    seed: int = 0

    def __post_init__(self):
        for m in self.modes:
            if m not in MODES:
                raise ConfigError(f"unknown inference mode {m!r}; expected one of {MODES}")
        if self.steps < 1:
            raise ConfigError("inference steps must be >= 1")
        if not 0.0 < self.sample_rate <= 1.0:
            raise ConfigError("sample_rate must lie in (0, 1]")


@dataclass
class BaselineSection:
    enabled: bool = True
    max_samples: int = 2000
    n_bins: int = 15
    granularity: str = "patch"


@dataclass
class RunConfig:
    name: str = "desk"
    seed: int = 0
    stages: list[str] = field(default_factory=lambda: list(STAGES))
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=lambda: ModelConfig.from_profile("tiny"))
    pretrain: TrainConfig = field(default_factory=TrainConfig.pretrain_defaults)
    finetune: TrainConfig = field(default_factory=TrainConfig.finetune_defaults)
    inference: InferenceSection = field(default_factory=InferenceSection)
    baseline: BaselineSection = field(default_factory=BaselineSection)

    def __post_init__(self):
        for s in self.stages:
            if s not in STAGES:
                raise ConfigError(f"unknown stage {s!r}; expected from {STAGES}")
        if self.dataset.L % self.model.patch[0] or self.dataset.W % self.model.patch[1] \
                or self.dataset.H % self.model.patch[2]:
            raise ConfigError(f"grid {(self.dataset.L, self.dataset.W, self.dataset.H)} "
                              f"not divisible by model patch {self.model.patch}")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        top_known = set(cls.__dataclass_fields__)
        unknown = set(d) - top_known
        if unknown:
            raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
        try:
            dataset = DatasetConfig.from_dict(d.get("dataset", {}))
            model = _model_from_dict(d.get("model", {}))
            pre = dict(d.get("pretrain", {}))
            pre.setdefault("stage", "pretrain")
            fin = dict(d.get("finetune", {}))
            fin.setdefault("stage", "finetune")
            fin_defaults = TrainConfig.finetune_defaults().to_dict()
            fin = {**fin_defaults, **fin}
            inference = InferenceSection(
                **_strict_fields(InferenceSection, d.get("inference", {}), "inference"))
            baseline = BaselineSection(
                **_strict_fields(BaselineSection, d.get("baseline", {}), "baseline"))
            return cls(name=d.get("name", "desk"), seed=int(d.get("seed", 0)),
                       stages=list(d.get("stages", STAGES)),
                       dataset=dataset, model=model,
                       pretrain=TrainConfig.from_dict(pre),
                       finetune=TrainConfig.from_dict(fin),
                       inference=inference, baseline=baseline)
        except (ValueError, TypeError) as e:
            raise ConfigError(str(e)) from e

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{p}: invalid JSON ({e})") from e
        if not isinstance(data, dict):
            raise ConfigError(f"{p}: top level must be a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {"name": self.name, "seed": self.seed, "stages": list(self.stages),
                "dataset": self.dataset.to_dict(), "model": self.model.to_dict(),
                "pretrain": self.pretrain.to_dict(), "finetune": self.finetune.to_dict(),
                "inference": asdict(self.inference), "baseline": asdict(self.baseline)}

    @property
    def hash(self) -> str:
        return config_hash(self.to_dict())

    def stage_hash(self, stage: str) -> str:
        """Hash over the config subset a stage depends on, for skip logic."""
        d = self.to_dict()
        deps = {
            "gen": ["dataset"],
            "pretrain": ["dataset", "model", "pretrain"],
            "finetune": ["dataset", "model", "pretrain", "finetune"],
            "infer": ["dataset", "model", "pretrain", "finetune", "inference"],
            "eval": ["dataset", "model", "pretrain", "finetune", "inference", "baseline"],
            "report": ["dataset", "model", "pretrain", "finetune", "inference", "baseline"],
        }[stage]
        subset = {k: d[k] for k in deps}
        subset["seed"] = self.seed
        return config_hash(subset)


def _model_from_dict(d: dict) -> ModelConfig:
    d = dict(d)
    profile = d.pop("profile", None)
    if "patch" in d:
        d["patch"] = tuple(d["patch"])
    if profile is not None:
        if profile not in PROFILES:
            raise ConfigError(f"unknown model profile {profile!r}; have {sorted(PROFILES)}")
        return ModelConfig.from_profile(profile, **d)
    known = set(ModelConfig.__dataclass_fields__)
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
    return ModelConfig(**d)
