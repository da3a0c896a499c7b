"""Experiment configuration: one JSON file drives a full pipeline run.

A single master seed derives every component seed over fixed streams, so
two runs with equal configs produce byte-identical artifacts and no seed
needs to be stated twice.
"""

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .classifier import TrainConfig
from .decision import ForestConfig
from .errors import ConfigError
from .features import FrameSpec, SegmentSpec
from .network import Architecture, resolve_architecture
from .refinery import RefineryConfig, derive_seed, normalize_mode

SCHEMA_VERSION = 1

# Seed streams hung off the master seed; values are part of the on-disk
# contract and must never change.
STREAM_REFINERY = 1
STREAM_FOREST = 2
STREAM_EVAL = 3


@dataclass(frozen=True)
class ExperimentConfig:
    master_seed: int = 0
    output_dir: str = "runs/default"
    mode: str = "pEPR"
    generations: int = 3
    folds: int = 10
    eval_folds: int = 10
    group_by_speaker: bool = False
    frame: FrameSpec = field(default_factory=FrameSpec)
    segment: SegmentSpec = field(default_factory=SegmentSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    forest: ForestConfig = field(default_factory=ForestConfig)

    def __post_init__(self):
        if self.master_seed < 0:
            raise ConfigError("master_seed must be >= 0")
        object.__setattr__(self, "mode", normalize_mode(self.mode))
        if self.eval_folds < 2:
            raise ConfigError("eval_folds must be >= 2")
        self.refinery_config()  # surfaces mode/generations/folds conflicts early

    def refinery_config(self) -> RefineryConfig:
        return RefineryConfig(
            generations=self.generations, mode=self.mode, folds=self.folds,
            seed=derive_seed(self.master_seed, STREAM_REFINERY),
            train=self.train, group_by_speaker=self.group_by_speaker)

    def forest_config(self) -> ForestConfig:
        return replace(self.forest, seed=derive_seed(self.master_seed, STREAM_FOREST))

    def eval_seed(self) -> int:
        return derive_seed(self.master_seed, STREAM_EVAL)

    def derived_seeds(self) -> dict:
        return {"refinery": self.refinery_config().seed,
                "forest": self.forest_config().seed,
                "eval": self.eval_seed()}


def _architecture_to_json(arch):
    if isinstance(arch, Architecture):
        return {"name": arch.name, "conv_stages": [list(s) for s in arch.conv_stages],
                "dense": list(arch.dense), "dtype": arch.dtype}
    return arch


def _architecture_from_json(value):
    if isinstance(value, str):
        return resolve_architecture(value).name
    if isinstance(value, dict):
        extra = set(value) - {"name", "conv_stages", "dense", "dtype"}
        if extra:
            raise ConfigError(f"unknown architecture keys {sorted(extra)}")
        if "name" not in value or "conv_stages" not in value:
            raise ConfigError("inline architecture needs name and conv_stages")
        return Architecture(
            name=value["name"],
            conv_stages=tuple(tuple(int(c) for c in s) for s in value["conv_stages"]),
            dense=tuple(int(d) for d in value.get("dense", [])),
            dtype=value.get("dtype", "float32"))
    raise ConfigError("architecture must be a name or an inline object")


# Per-section (dataclass type, seed-style keys excluded from the schema).
_SECTIONS = {
    "frame": (FrameSpec, ()),
    "segment": (SegmentSpec, ()),
    "train": (TrainConfig, ("seed",)),
    "forest": (ForestConfig, ("seed",)),
}
_TOP_KEYS = ("master_seed", "output_dir", "mode", "generations", "folds",
             "eval_folds", "group_by_speaker")


def config_to_dict(cfg: ExperimentConfig) -> dict:
    doc = {"schema_version": SCHEMA_VERSION}
    for key in _TOP_KEYS:
        doc[key] = getattr(cfg, key)
    for section, (cls, excluded) in _SECTIONS.items():
        value = getattr(cfg, section)
        body = {f.name: getattr(value, f.name) for f in fields(cls) if f.name not in excluded}
        if "architecture" in body:
            body["architecture"] = _architecture_to_json(body["architecture"])
        doc[section] = body
    return doc


def _section_from_dict(section: str, body: dict):
    cls, excluded = _SECTIONS[section]
    if not isinstance(body, dict):
        raise ConfigError(f"section {section!r} must be an object")
    allowed = {f.name for f in fields(cls)} - set(excluded)
    extra = set(body) - allowed
    if extra:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(extra)}")
    kwargs = dict(body)
    if "architecture" in kwargs:
        kwargs["architecture"] = _architecture_from_json(kwargs["architecture"])
    for key in ("conv_stages", "dense"):
        if key in kwargs:  # pragma: no cover - sections hold no bare tuples today
            kwargs[key] = tuple(kwargs[key])
    return cls(**kwargs)


def config_from_dict(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported config schema_version {version!r}")
    extra = set(doc) - {"schema_version", *_TOP_KEYS, *_SECTIONS}
    if extra:
        raise ConfigError(f"unknown config keys: {sorted(extra)}")
    kwargs = {key: doc[key] for key in _TOP_KEYS if key in doc}
    for section in _SECTIONS:
        if section in doc:
            kwargs[section] = _section_from_dict(section, doc[section])
    return ExperimentConfig(**kwargs)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"no config file at {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return config_from_dict(doc)


def save_config(path, cfg: ExperimentConfig) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n")
