"""Training hyperparameter records and the layered pipeline configuration.

The per-stage defaults are the full-data settings; desk-scale runs override
epochs/steps through the same records.
"""

import dataclasses
from dataclasses import dataclass
from typing import Optional

import yaml


@dataclass(frozen=True)
class TrainConfig:
    """One stage's training hyperparameters.

    `max_steps` caps total optimizer steps (desk-scale runs); `stop_at_metric`
    stops early once the monitored training metric reaches the value. Both
    default to off and leave the full-scale settings untouched.
    """

    batch_size: int
    learning_rate: float
    epochs: int
    optimizer: str = "adam"
    loss: str = "dice"
    val_fraction: float = 0.1
    max_steps: Optional[int] = None
    stop_at_metric: Optional[float] = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.optimizer != "adam":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")

    def replace(self, **overrides):
        return dataclasses.replace(self, **overrides)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


def seg_train_defaults():
    return TrainConfig(batch_size=4, learning_rate=1e-4, epochs=60, loss="dice")


def det_train_defaults():
    return TrainConfig(batch_size=64, learning_rate=0.01, epochs=600,
                       loss="box+obj+cls")


def cls_train_defaults():
    return TrainConfig(batch_size=256, learning_rate=1e-4, epochs=60,
                       loss="categorical_cross_entropy")


@dataclass
class PipelineConfig:
    """Paths, stage settings, and run seed for the end-to-end pipeline."""

    data_root: str = "."
    output_root: str = "out"
    seg_checkpoint: str = "checkpoints/seg"
    det_checkpoint: str = "checkpoints/det"
    cls_checkpoint: str = "checkpoints/cls"
    canonical_cube: int = 256
    seed: int = 0
    mask_gate: bool = True
    crop_margin: int = 2
    seg_train: TrainConfig = dataclasses.field(default_factory=seg_train_defaults)
    det_train: TrainConfig = dataclasses.field(default_factory=det_train_defaults)
    cls_train: TrainConfig = dataclasses.field(default_factory=cls_train_defaults)
    segmenter: dict = dataclasses.field(default_factory=dict)
    detector: dict = dataclasses.field(default_factory=dict)
    classifier: dict = dataclasses.field(default_factory=dict)

    def to_dict(self):
        out = dataclasses.asdict(self)
        return out

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        for key in ("seg_train", "det_train", "cls_train"):
            if key in data and isinstance(data[key], dict):
                base = getattr(cls(), key).to_dict()
                base.update(data[key])
                data[key] = TrainConfig.from_dict(base)
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


def load_pipeline_config(path=None, overrides=None):
    """Built-in defaults, overlaid by a YAML file, overlaid by CLI overrides."""
    data = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise ValueError(f"{path}: config root must be a mapping")
        data.update(loaded)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        data[key] = value
    return PipelineConfig.from_dict(data)


def dump_pipeline_config(config, path):
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=True)
