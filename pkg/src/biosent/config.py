"""Run configuration: one JSON/TOML document for everything that affects results."""

from __future__ import annotations

import dataclasses
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .encoder import EncoderConfig
from .errors import ConfigError
from .objectives import PerturbConfig
from .synthgen import MaskSpec, SynthTaskConfig
from .tokenizer import TokenizerConfig
from .trainer import TrainConfig

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class TaskConfig:
    n_classes: int | None = None
    metrics: tuple = ()


@dataclass(frozen=True)
class SynthCorpusConfig:
    task: SynthTaskConfig = SynthTaskConfig()
    n_train: int = 2000
    n_val: int = 500
    n_test: int = 500


@dataclass(frozen=True)
class PretrainConfig:
    perturb: PerturbConfig = PerturbConfig()
    save_epochs: tuple = ()


@dataclass(frozen=True)
class MaskConfig:
    spec: MaskSpec | None = None
    seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    tokenizer: TokenizerConfig = TokenizerConfig()
    encoder: EncoderConfig = EncoderConfig()
    train: TrainConfig = TrainConfig()
    task: TaskConfig = TaskConfig()
    synth: SynthCorpusConfig = SynthCorpusConfig()
    pretrain: PretrainConfig = PretrainConfig()
    mask: MaskConfig = MaskConfig()


# section name -> (dataclass, keys handled outside the dataclass)
_SIMPLE = {
    "tokenizer": TokenizerConfig,
    "encoder": EncoderConfig,
    "train": TrainConfig,
    "task": TaskConfig,
}
_EXTRA_KEYS = {
    "synth": ("n_train", "n_val", "n_test"),
    "pretrain": ("save_epochs",),
    "mask": ("seed",),
}
_WRAPPED = {
    "synth": SynthTaskConfig,
    "pretrain": PerturbConfig,
    "mask": MaskSpec,
}


def _field_names(cls):
    return [f.name for f in dataclasses.fields(cls)]


def _build(cls, section: str, values: dict, errors: list):
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        errors.append(f"{section}: {exc}")
        return None


def parse_config(doc: dict) -> RunConfig:
    """Validate a config mapping; every problem is reported at once."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    errors = []
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        errors.append(f"schema_version: expected {SCHEMA_VERSION}, got {version!r}")
    allowed_top = {"schema_version", *_SIMPLE, *_WRAPPED}
    for key in doc:
        if key not in allowed_top:
            errors.append(f"unknown key: {key}")
    built = {}
    for section, cls in {**_SIMPLE, **_WRAPPED}.items():
        values = doc.get(section, {}) or {}
        if not isinstance(values, dict):
            errors.append(f"{section}: must be a table/object")
            continue
        allowed = set(_field_names(cls)) | set(_EXTRA_KEYS.get(section, ()))
        for key in values:
            if key not in allowed:
                errors.append(f"unknown key: {section}.{key}")
        inner = {k: v for k, v in values.items() if k in _field_names(cls)}
        if section == "task" and "metrics" in inner:
            inner["metrics"] = tuple(inner["metrics"])
        if section == "mask" and not inner:
            built[section] = None
            continue
        built[section] = _build(cls, section, inner, errors)
    if errors:
        raise ConfigError(f"{len(errors)} configuration error(s)", details=errors)
    synth_vals = doc.get("synth", {}) or {}
    pre_vals = doc.get("pretrain", {}) or {}
    mask_vals = doc.get("mask", {}) or {}
    return RunConfig(
        tokenizer=built["tokenizer"],
        encoder=built["encoder"],
        train=built["train"],
        task=built["task"],
        synth=SynthCorpusConfig(
            built["synth"],
            int(synth_vals.get("n_train", 2000)),
            int(synth_vals.get("n_val", 500)),
            int(synth_vals.get("n_test", 500)),
        ),
        pretrain=PretrainConfig(built["pretrain"], tuple(pre_vals.get("save_epochs", ()))),
        mask=MaskConfig(built["mask"], int(mask_vals.get("seed", 0))),
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        if path.suffix == ".toml":
            if sys.version_info >= (3, 11):
                import tomllib
            else:
                import tomli as tomllib
            doc = tomllib.loads(text)
        else:
            doc = json.loads(text)
    except Exception as exc:  # decoder errors differ between json/toml
        raise ConfigError(f"{path}: cannot parse ({exc})") from exc
    return parse_config(doc)


def default_config_dict() -> dict:
    """Every key with its default value, in the on-disk layout."""
    cfg = RunConfig()
    synth = dataclasses.asdict(cfg.synth.task)
    synth.update(n_train=cfg.synth.n_train, n_val=cfg.synth.n_val, n_test=cfg.synth.n_test)
    pre = dataclasses.asdict(cfg.pretrain.perturb)
    pre["save_epochs"] = []
    mask = dataclasses.asdict(MaskSpec())
    mask["seed"] = 0
    task = dataclasses.asdict(cfg.task)
    task["metrics"] = list(task["metrics"])
    return {
        "schema_version": SCHEMA_VERSION,
        "tokenizer": dataclasses.asdict(cfg.tokenizer),
        "encoder": dataclasses.asdict(cfg.encoder),
        "train": dataclasses.asdict(cfg.train),
        "task": task,
        "synth": synth,
        "pretrain": pre,
        "mask": mask,
    }
