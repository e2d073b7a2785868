from __future__ import annotations

import math
from enum import Enum
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from bninvert.core.errors import InvalidStateError


class LabelScheme(str, Enum):
    ROUND_ROBIN = "round_robin"
    RANDOM_BALANCED = "random_balanced"


class SynthesisConfig(BaseModel):
    """Hyperparameters of one synthetic-dataset generation run."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    steps: int = Field(default=200, ge=1, description="k: optimization steps per batch")
    batch_size: int = Field(default=100, ge=1, description="b_s: images per batch")
    num_images: int = Field(default=1000, ge=1, description="N: total synthetic images")
    lr: float = Field(default=0.1, gt=0)
    beta1: float = Field(default=0.9, gt=0, lt=1)
    beta2: float = Field(default=0.999, gt=0, lt=1)
    adam_eps: float = Field(default=1e-8, gt=0)
    seed: int = Field(default=0, ge=0)
    label_scheme: LabelScheme = Field(default=LabelScheme.ROUND_ROBIN)
    clip_min: Optional[float] = None
    clip_max: Optional[float] = None
    match_std: bool = False
    bn_mean_weight: float = Field(default=1.0, ge=0)
    bn_var_weight: float = Field(default=1.0, ge=0)
    ce_weight: float = Field(default=1.0, ge=0)
    threads: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _check(self) -> "SynthesisConfig":
        if self.num_images % self.batch_size:
            raise ValueError(
                f"num_images ({self.num_images}) must be divisible by batch_size ({self.batch_size})"
            )
        if (self.clip_min is None) != (self.clip_max is None):
            raise ValueError("clip_min and clip_max must be set together")
        if self.clip_min is not None and self.clip_max is not None and self.clip_min >= self.clip_max:
            raise ValueError(f"clip_min ({self.clip_min}) must be below clip_max ({self.clip_max})")
        return self

    @property
    def iterations(self) -> int:
        return self.num_images // self.batch_size


class TrainConfig(BaseModel):
    """SGD + cosine-annealed training recipe (stepped per epoch)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    epochs: int = Field(default=30, ge=1)
    batch_size: int = Field(default=64, ge=1)
    lr: float = Field(default=0.05, gt=0)
    lr_min: float = Field(default=0.0, ge=0)
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _check(self) -> "TrainConfig":
        if self.lr_min > self.lr:
            raise ValueError(f"lr_min ({self.lr_min}) must not exceed lr ({self.lr})")
        return self


class LossBreakdown(BaseModel):
    model_config = ConfigDict(frozen=True)

    bn_mean_term: float = Field(ge=0)
    bn_var_term: float = Field(ge=0)
    ce_term: float = Field(ge=0)
    total: float = Field(ge=0)

    @classmethod
    def from_terms(cls, bn_mean_term: float, bn_var_term: float, ce_term: float) -> "LossBreakdown":
        terms = (float(bn_mean_term), float(bn_var_term), float(ce_term))
        if not all(math.isfinite(t) for t in terms):
            raise InvalidStateError(f"Synthesis loss diverged: bn_mean={terms[0]}, bn_var={terms[1]}, ce={terms[2]}")
        # float32 log-softmax can land a hair below zero on perfect logits
        mean_term, var_term, ce = terms[0], terms[1], max(terms[2], 0.0)
        return cls(bn_mean_term=mean_term, bn_var_term=var_term, ce_term=ce, total=mean_term + var_term + ce)


class EpochRecord(BaseModel):
    epoch: int = Field(ge=0)
    train_loss: float
    test_acc: Optional[float] = Field(default=None, ge=0, le=1)


class Metrics(BaseModel):
    epochs: List[EpochRecord] = Field(default_factory=list)
    wall_clock_s: float = 0.0

    @property
    def final_test_acc(self) -> Optional[float]:
        for record in reversed(self.epochs):
            if record.test_acc is not None:
                return record.test_acc
        return None


class DatasetManifest(BaseModel):
    """Description of a SYND dataset directory."""

    model_config = ConfigDict(extra="forbid")

    name: str
    class_count: int = Field(ge=1)
    image_shape: Tuple[int, int, int]
    split_sizes: Dict[str, int] = Field(default_factory=dict)
    norm_mean: List[float]
    norm_std: List[float]
    files: Dict[str, str] = Field(default_factory=dict)
    checksums: Dict[str, int] = Field(default_factory=dict)
    metadata: Dict[str, str] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check(self) -> "DatasetManifest":
        channels = self.image_shape[0]
        if min(self.image_shape) < 1:
            raise ValueError(f"image_shape dims must be positive, got {self.image_shape}")
        if len(self.norm_mean) != channels or len(self.norm_std) != channels:
            raise ValueError(f"normalization must have {channels} entries per statistic")
        if any(not (s > 0 and math.isfinite(s)) for s in self.norm_std):
            raise ValueError(f"norm_std entries must be positive, got {self.norm_std}")
        return self
