"""JSON run configuration: every field optional, unknown keys rejected."""
import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .train import TrainConfig


class ConfigError(ValueError):
    pass


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", strict=False)


class CorpusSection(_Section):
    seed: int = 0
    n_pairs: int = Field(128, ge=1)
    n_classes: int = Field(8, ge=1, le=8)
    frames: int = Field(64, ge=1)
    joints: int = Field(8, ge=1)
    captions_per_motion: int = Field(1, ge=1)


class LossSection(_Section):
    temperature: float = Field(0.07, gt=0)
    smooth_l1_beta: float = Field(1.0, gt=0)
    weights: tuple[float, float, float] = (1.0, 1.0, 1.0)

    @field_validator("weights")
    @classmethod
    def _non_negative(cls, w):
        if any(x < 0 for x in w):
            raise ValueError("loss weights must be non-negative")
        return w


class TrainSection(_Section):
    learning_rate: float = Field(1e-4, ge=0)
    batch_size: int = Field(32, ge=2)
    epochs: int = Field(30, ge=1)
    seed: int = 0
    latent_dim: int = Field(256, ge=1)
    levels: int = Field(3, ge=1)
    n_groups: int = Field(16, ge=1)
    shuffle_ratio: float = Field(0.25, ge=0, le=1)
    family: Literal["haar", "db2"] = "haar"
    filter_mode: Literal["fixed", "learnable"] = "learnable"
    k_low: int = Field(9, ge=1)
    k_high: int = Field(3, ge=1)
    n_blocks: int = Field(2, ge=1)
    n_heads: int = Field(4, ge=1)
    dtype: Literal["float32", "float64"] = "float32"


class AuditSection(_Section):
    tolerance: float = Field(1e-6, gt=0)
    n_coords: int = Field(32, ge=1)
    seed: int = 0
    levels: int = Field(2, ge=1)
    n_groups: int = Field(4, ge=1, le=8)


class PathsSection(_Section):
    corpus_dir: Optional[str] = None
    out_dir: Optional[str] = None


class CliConfig(_Section):
    corpus: CorpusSection = CorpusSection()
    train: TrainSection = TrainSection()
    loss: LossSection = LossSection()
    audit: AuditSection = AuditSection()
    paths: PathsSection = PathsSection()

    def train_config(self):
        return TrainConfig(**self.train.model_dump(), temperature=self.loss.temperature,
                           smooth_l1_beta=self.loss.smooth_l1_beta, weights=tuple(self.loss.weights))


def _describe(err):
    lines = []
    for e in err.errors():
        path = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{path}: {e['msg']}")
    return "; ".join(lines)


def parse_config(obj):
    try:
        return CliConfig.model_validate(obj or {})
    except ValidationError as err:
        raise ConfigError(_describe(err)) from None


def load_config(path=None):
    if path is None:
        return CliConfig()
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON ({err})") from None
    return parse_config(obj)


def with_overrides(cfg, section, **values):
    """Copy of ``cfg`` with fields of one section replaced (and re-validated)."""
    data = cfg.model_dump()
    data[section].update({k: v for k, v in values.items() if v is not None})
    return parse_config(data)
