"""Experiment configuration: a flat key = value text format with a fixed schema.

Unknown keys are rejected rather than silently ignored, so typos fail loud.
All randomness in an experiment flows from the `seeds` list; there is no
wall-clock entropy anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .errors import ConfigError

SCHEMA_VERSION = 1

DATASET_KINDS = ("synthetic", "cifar100", "image_dir")
BUFFER_MODES = ("gps", "full", "none")


@dataclass
class ExperimentConfig:
    schema_version: int = SCHEMA_VERSION
    # dataset source
    dataset: str = "synthetic"
    synthetic_classes: int = 10
    synthetic_resolution: int = 32
    synthetic_channels: int = 3
    synthetic_train_per_class: int = 100
    synthetic_test_per_class: int = 20
    synthetic_noise: float = 20.0
    synthetic_pattern_seed: int = 7
    synthetic_contrast: float = 25.0
    synthetic_baseline: float = 32.0
    cifar_train_path: str = ""
    cifar_test_path: str = ""
    image_dir: str = ""
    image_test_fraction: float = 0.2
    # task layout
    tasks: int = 5
    classes_per_task: int = 2
    # buffer
    buffer_mode: str = "gps"
    budget_images: int = 20
    factor: int = 2
    # training
    stream_batch: int = 10
    replay_batch: int = 100
    replay_units: str = "samples"
    learning_rate: float = 0.1
    replay_weight: float = 1.0
    hidden_units: int = 128
    embedding_units: int = 64
    # inference
    head: str = "ncm"
    normalize_embeddings: bool = False
    # runs
    seeds: tuple = (0,)
    out_dir: str = "runs"

    def validate(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(
                f"schema_version {self.schema_version} unsupported: expected {SCHEMA_VERSION}"
            )
        if self.dataset not in DATASET_KINDS:
            raise ConfigError(f"dataset must be one of {DATASET_KINDS}, got {self.dataset!r}")
        if self.dataset == "cifar100":
            if not self.cifar_train_path:
                raise ConfigError("cifar_train_path is required when dataset = cifar100")
            if not self.cifar_test_path:
                raise ConfigError("cifar_test_path is required when dataset = cifar100")
        if self.dataset == "image_dir" and not self.image_dir:
            raise ConfigError("image_dir is required when dataset = image_dir")
        if not 0.0 < self.image_test_fraction < 1.0:
            raise ConfigError(
                f"image_test_fraction must lie in (0, 1), got {self.image_test_fraction}"
            )
        for name in ("synthetic_classes", "synthetic_resolution",
                     "synthetic_train_per_class", "synthetic_test_per_class",
                     "tasks", "classes_per_task", "budget_images", "factor",
                     "stream_batch", "hidden_units", "embedding_units"):
            value = getattr(self, name)
            if value < 1:
                raise ConfigError(f"{name} must be >= 1, got {value}")
        if self.replay_batch < 0:
            raise ConfigError(f"replay_batch must be >= 0, got {self.replay_batch}")
        if self.synthetic_channels not in (1, 3):
            raise ConfigError(f"synthetic_channels must be 1 or 3, got {self.synthetic_channels}")
        if self.synthetic_noise < 0:
            raise ConfigError(f"synthetic_noise must be >= 0, got {self.synthetic_noise}")
        if not 0.0 <= self.synthetic_baseline <= 255.0:
            raise ConfigError(
                f"synthetic_baseline must lie in [0, 255], got {self.synthetic_baseline}"
            )
        if self.buffer_mode not in BUFFER_MODES:
            raise ConfigError(f"buffer_mode must be one of {BUFFER_MODES}, got {self.buffer_mode!r}")
        if self.replay_units not in ("samples", "images"):
            raise ConfigError(
                f"replay_units must be 'samples' or 'images', got {self.replay_units!r}"
            )
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.head not in ("ncm", "softmax"):
            raise ConfigError(f"head must be 'ncm' or 'softmax', got {self.head!r}")
        if self.head == "ncm" and self.buffer_mode == "none":
            raise ConfigError("head = ncm requires a buffer; set head = softmax or enable a buffer")
        if not self.seeds:
            raise ConfigError("seeds must be a non-empty list of integers")
        for s in self.seeds:
            if s < 0:
                raise ConfigError(f"seeds must be non-negative, got {s}")
        return self


_BOOL_WORDS = {"true": True, "false": False}


def _parse_value(name, kind, raw):
    raw = raw.strip()
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is bool:
            if raw.lower() not in _BOOL_WORDS:
                raise ValueError(f"expected true or false, got {raw!r}")
            return _BOOL_WORDS[raw.lower()]
        if kind is tuple:
            if not raw:
                return ()
            return tuple(int(p.strip()) for p in raw.split(","))
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {exc}") from exc


_KIND = {"int": int, "float": float, "str": str, "bool": bool, "tuple": tuple}


def parse_config(text) -> ExperimentConfig:
    """Parse key = value lines; '#' starts a comment; unknown keys are errors."""
    schema = {f.name: _KIND[f.type] for f in fields(ExperimentConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key = value, got {line.strip()!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key not in schema:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate config key {key!r}")
        values[key] = _parse_value(key, schema[key], raw)
    return ExperimentConfig(**values)


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read()).validate()


def serialize_config(config: ExperimentConfig) -> str:
    """Canonical text form; parse(serialize(c)) equals c field-wise."""
    lines = []
    for f in fields(ExperimentConfig):
        value = getattr(config, f.name)
        if f.type == "bool":
            text = "true" if value else "false"
        elif f.type == "tuple":
            text = ",".join(str(v) for v in value)
        else:
            text = str(value)
        lines.append(f"{f.name} = {text}")
    return "\n".join(lines) + "\n"


def config_to_dict(config: ExperimentConfig) -> dict:
    out = {}
    for f in fields(ExperimentConfig):
        value = getattr(config, f.name)
        out[f.name] = list(value) if isinstance(value, tuple) else value
    return out
