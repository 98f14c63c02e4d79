"""Run configuration: one declarative document covering every pipeline knob.

Configs load from JSON, accept dotted command-line overrides
(``section.field=value``), and serialize back to canonical JSON so each
command can drop an exact snapshot beside its outputs. Stage seeds are
derived from the single run seed so one integer pins the whole run.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

from .embedding import EmbeddingConfig
from .errors import ConfigurationError
from .prediction import StackAttConfig, Stage2Config
from .propagation import PropagationConfig
from .simulator import Stage1Config
from .synth import MOTION_MODELS
from .utils import derive_seed


@dataclass(frozen=True)
class DataConfig:
    train: str | None = None
    val: str | None = None
    test: str | None = None
    schema: str = "native"
    group_mode: str = "auto"


@dataclass(frozen=True)
class SynthDatasetConfig:
    n_train: int = 40
    n_val: int = 10
    n_test: int = 16
    n_groups_range: tuple[int, int] = (3, 6)
    group_size_range: tuple[int, int] = (2, 4)
    n_loners_range: tuple[int, int] = (2, 4)
    motion_models: tuple[str, ...] = MOTION_MODELS
    frame_count: int = 10
    scene_extent: tuple[float, float] = (1000.0, 800.0)
    noise_scale: float = 2.0

    def validate(self) -> "SynthDatasetConfig":
        if min(self.n_train, self.n_val, self.n_test) < 0:
            raise ConfigurationError("split sizes must be >= 0")
        for name, rng in (("n_groups_range", self.n_groups_range), ("group_size_range", self.group_size_range), ("n_loners_range", self.n_loners_range)):
            if rng[0] > rng[1] or rng[0] < 0:
                raise ConfigurationError(f"{name} must satisfy 0 <= min <= max, got {rng}")
        for m in self.motion_models:
            if m not in MOTION_MODELS:
                raise ConfigurationError(f"unknown motion model {m!r}")
        return self


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/out"
    normalized_features: bool = True
    data: DataConfig = field(default_factory=DataConfig)
    synth: SynthDatasetConfig = field(default_factory=SynthDatasetConfig)
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    stage1: Stage1Config = field(default_factory=Stage1Config)
    stage2: Stage2Config = field(default_factory=Stage2Config)
    attention: StackAttConfig = field(default_factory=StackAttConfig)
    propagation: PropagationConfig = field(default_factory=PropagationConfig)

    def stage1_effective(self) -> Stage1Config:
        return dataclasses.replace(self.stage1, seed=derive_seed(self.seed, 101))

    def stage2_effective(self) -> Stage2Config:
        return dataclasses.replace(self.stage2, seed=derive_seed(self.seed, 102))

    def validate(self) -> "RunConfig":
        self.synth.validate()
        self.embedding.validate()
        self.stage1.validate()
        self.stage2.validate()
        self.attention.validate()
        self.propagation.validate()
        return self


_SECTIONS = {
    "data": DataConfig,
    "synth": SynthDatasetConfig,
    "embedding": EmbeddingConfig,
    "stage1": Stage1Config,
    "stage2": Stage2Config,
    "attention": StackAttConfig,
    "propagation": PropagationConfig,
}


def _coerce(value, annotation_default):
    if isinstance(annotation_default, tuple) and isinstance(value, (list, tuple)):
        return tuple(value)
    return value


def _build_section(cls, data: dict, section: str):
    defaults = cls()
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in names:
            raise ConfigurationError(f"unknown config key {section}.{key}")
        kwargs[key] = _coerce(value, getattr(defaults, key))
    return cls(**kwargs)


def config_from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigurationError("config document must be a JSON object")
    kwargs = {}
    for key, value in doc.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigurationError(f"config section {key} must be an object")
            kwargs[key] = _build_section(_SECTIONS[key], value, key)
        elif key in ("seed", "out_dir", "normalized_features"):
            kwargs[key] = value
        else:
            raise ConfigurationError(f"unknown config key {key}")
    return RunConfig(**kwargs).validate()


def config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def config_to_json(cfg: RunConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n"


def load_config(path: str | None, overrides: list[str] | None = None) -> RunConfig:
    doc: dict = {}
    if path is not None:
        if not os.path.exists(path):
            raise ConfigurationError(f"config file not found: {path}")
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as e:
                raise ConfigurationError(f"invalid config JSON {path}: {e}") from e
    for item in overrides or []:
        doc = _apply_override(doc, item)
    return config_from_dict(doc)


def _apply_override(doc: dict, item: str) -> dict:
    if "=" not in item:
        raise ConfigurationError(f"override must look like section.key=value, got {item!r}")
    dotted, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    parts = dotted.strip().split(".")
    node = doc
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigurationError(f"cannot override through non-object key {p!r}")
    node[parts[-1]] = value
    return doc


def write_snapshot(cfg: RunConfig, out_dir: str, name: str = "config.snapshot.json") -> str:
    path = os.path.join(out_dir, name)
    with open(path, "w") as fh:
        fh.write(config_to_json(cfg))
    return path
