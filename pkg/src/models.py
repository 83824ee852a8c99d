"""
Pydantic models for the X-ray DPN-SE toolkit: configurations, explanations and reports.
"""
from enum import Enum
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

U64_MAX = 2**64 - 1


class XrayClass(str, Enum):
    """Canonical radiograph classes, in manifest order."""
    COVID_19 = "COVID-19"
    NORMAL = "Normal"
    PNEUMONIA_BACTERIAL = "Pneumonia Bacterial"
    PNEUMONIA_VIRAL = "Pneumonia Viral"


CLASS_NAMES: List[str] = [member.value for member in XrayClass]


class StemConfig(BaseModel):
    """Stem convolution and max-pooling layer."""
    model_config = ConfigDict(extra="forbid")

    kernel: int = Field(default=7, ge=1, description="Stem convolution kernel size")
    stride: int = Field(default=2, ge=1, description="Stem convolution stride")
    out_channels: int = Field(..., ge=1, description="Stem output channels")
    pool_kernel: int = Field(default=3, ge=1, description="Max-pool window")
    pool_stride: int = Field(default=2, ge=1, description="Max-pool stride")


class StageConfig(BaseModel):
    """One stage of dual-path substages at a single spatial resolution."""
    model_config = ConfigDict(extra="forbid")

    num_substages: int = Field(..., ge=1, description="Substages in the stage")
    residual_width: int = Field(..., ge=1, description="Residual path channels (C_r)")
    dense_increment: int = Field(..., ge=1, description="New dense channels per substage (k)")
    bottleneck_width: int = Field(..., ge=1, description="Bottleneck channels")
    stride: Literal[1, 2] = Field(default=1, description="Stride of the first substage")


class DpnSeConfig(BaseModel):
    """Full architectural description of a DPN or DPN-SE classifier."""
    model_config = ConfigDict(
        extra="forbid",
        json_schema_extra={
            "example": {
                "input_channels": 1,
                "input_size": 32,
                "stem": {"out_channels": 8},
                "stages": [
                    {"num_substages": 1, "residual_width": 8, "dense_increment": 4,
                     "bottleneck_width": 8, "stride": 1}
                ] * 4,
                "se_enabled": True,
                "se_reduction": 4,
                "num_classes": 4,
            }
        },
    )

    input_channels: int = Field(..., ge=1, description="Image channels (1 or 3)")
    input_size: int = Field(..., ge=1, description="Square input side length")
    stem: StemConfig
    stages: List[StageConfig] = Field(..., min_length=4, max_length=4)
    se_enabled: bool = Field(default=True, description="Attach SE after every substage")
    se_reduction: int = Field(default=4, ge=1, description="SE reduction ratio r")
    num_classes: int = Field(default=4, ge=1)
    batch_norm: bool = Field(default=True, description="Batch norm after every convolution")
    bn_eps: float = Field(default=1e-5, gt=0)
    bn_momentum: float = Field(default=0.1, gt=0, le=1)


class AugmentConfig(BaseModel):
    """Resize / random crop / random affine augmentation parameters."""
    model_config = ConfigDict(extra="forbid")

    target: int = Field(default=224, ge=1, description="Output side length")
    flip_prob: float = Field(default=0.5, ge=0.0, le=1.0)
    rotate_max_deg: float = Field(default=10.0, ge=0.0)
    scale_range: Tuple[float, float] = Field(default=(0.9, 1.1))
    seed: int = Field(default=0, ge=0, le=U64_MAX)

    @field_validator("scale_range")
    @classmethod
    def _ordered_scale(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        lo, hi = value
        if not 0 < lo <= hi:
            raise ValueError(f"scale_range must satisfy 0 < lo <= hi, got {value}")
        return value

    @property
    def is_identity(self) -> bool:
        """True when no flip, rotation or scaling can be drawn."""
        return self.flip_prob == 0.0 and self.rotate_max_deg == 0.0 and self.scale_range == (1.0, 1.0)


class TrainConfig(BaseModel):
    """Optimisation settings for a training run."""
    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(default=60, ge=0)
    batch_size: int = Field(default=16, ge=1)
    learning_rate: float = Field(default=0.05, gt=0)
    momentum: float = Field(default=0.9, ge=0, lt=1)
    weight_decay: float = Field(default=0.0, ge=0)
    seed: int = Field(..., ge=0, le=U64_MAX, description="Mandatory run seed")
    val_fraction: float = Field(default=0.2, ge=0, lt=1)
    augment: bool = Field(default=False, description="Apply the augmentation pipeline")


class LimeConfig(BaseModel):
    """Local surrogate explanation settings."""
    model_config = ConfigDict(extra="forbid")

    g: int = Field(default=8, ge=1, description="Grid tiles per axis")
    n_samples: int = Field(default=1000, ge=1)
    sigma: float = Field(default=0.25, gt=0)
    ridge_lambda: float = Field(default=1e-3, ge=0)
    top_k: int = Field(default=10, ge=1)
    seed: int = Field(default=0, ge=0, le=U64_MAX)
    segmenter: Literal["grid", "slic"] = "grid"
    slic_segments: int = Field(default=64, ge=1)
    slic_compactness: float = Field(default=10.0, gt=0)


class RunConfig(BaseModel):
    """Everything a CLI run needs."""
    model_config = ConfigDict(extra="forbid")

    model: DpnSeConfig
    augment: AugmentConfig
    train: TrainConfig
    lime: LimeConfig


class Explanation(BaseModel):
    """Surrogate coefficients for one explained prediction."""
    target_class: int = Field(..., ge=0)
    coefficients: List[float]
    intercept: float
    top_k: List[int] = Field(default=[], description="Segment ids, |coefficient| descending")
    fit_r2: float
    normal_residual: float = Field(default=0.0, description="Infinity norm of the normal-equation residual")
    degenerate: bool = Field(default=False, description="All perturbed predictions were identical")

    @model_validator(mode="after")
    def _check_top_k(self) -> "Explanation":
        if len(self.top_k) > len(self.coefficients):
            raise ValueError("top_k cannot exceed the number of segments")
        magnitudes = [abs(self.coefficients[i]) for i in self.top_k]
        if any(a < b for a, b in zip(magnitudes, magnitudes[1:])):
            raise ValueError("top_k must be ordered by |coefficient| descending")
        return self


class ConfusionMatrix(BaseModel):
    """Counts indexed [true class][predicted class]."""
    counts: List[List[int]]
    class_names: List[str]

    @model_validator(mode="after")
    def _check_shape(self) -> "ConfusionMatrix":
        size = len(self.class_names)
        if len(self.counts) != size or any(len(row) != size for row in self.counts):
            raise ValueError("counts must be a C x C matrix matching class_names")
        if any(value < 0 for row in self.counts for value in row):
            raise ValueError("counts must be non-negative")
        return self

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def total(self) -> int:
        return int(sum(sum(row) for row in self.counts))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=np.int64).reshape(self.num_classes, self.num_classes)


class BinaryCounts(BaseModel):
    """One-vs-rest counts for a single positive class."""
    tp: int = Field(..., ge=0)
    fp: int = Field(..., ge=0)
    tn: int = Field(..., ge=0)
    fn: int = Field(..., ge=0)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


class ClassMetrics(BaseModel):
    """Per-class one-vs-rest metrics."""
    name: str
    precision: float = Field(..., ge=0, le=1)
    recall: float = Field(..., ge=0, le=1)
    f1: float = Field(..., ge=0, le=1)
    support: int = Field(..., ge=0)
    degenerate: List[str] = Field(default=[], description="Metrics whose denominator was zero")


class PositiveSummary(BaseModel):
    """Accuracy, precision, recall and F1 with one class treated as positive."""
    class_name: str
    accuracy: float
    precision: float
    recall: float
    f1: float


class MetricsReport(BaseModel):
    """Confusion matrix plus per-class, macro and overall metrics."""
    class_names: List[str]
    confusion: List[List[int]]
    per_class: List[ClassMetrics]
    overall_accuracy: float = Field(..., ge=0, le=1)
    positive_class: str
    positive_summary: PositiveSummary
    macro_precision: float
    macro_recall: float
    macro_f1: float


class DatasetEntry(BaseModel):
    """One manifest line."""
    path: str = Field(..., description="Path relative to the manifest root")
    label: str


class DatasetManifest(BaseModel):
    """Labelled image list rooted at a directory."""
    root: str
    entries: List[DatasetEntry]
    class_names: List[str]

    @model_validator(mode="after")
    def _labels_known(self) -> "DatasetManifest":
        known = set(self.class_names)
        unknown = sorted({entry.label for entry in self.entries} - known)
        if unknown:
            raise ValueError(f"labels not in class_names: {unknown}")
        return self

    def label_indices(self) -> List[int]:
        index = {name: i for i, name in enumerate(self.class_names)}
        return [index[entry.label] for entry in self.entries]

    def class_counts(self) -> dict:
        counts = {name: 0 for name in self.class_names}
        for entry in self.entries:
            counts[entry.label] += 1
        return counts


class EpochRecord(BaseModel):
    """One row of the training log."""
    epoch: int
    loss: float
    accuracy: float
    val_accuracy: Optional[float] = None
