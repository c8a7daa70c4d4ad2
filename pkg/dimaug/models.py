"""Data models for dimaug.

This module defines the core data structures shared across the package: the augmentation
operation catalogue and its magnitude ranges, deployed policies, LID estimates and metrics
records. Models use pydantic so they validate on construction and serialize to JSON.
"""

import math
from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field, field_validator, model_validator


class AugOpKind(str, Enum):
    """Augmentation operations.

    The first ten make up the search space, in search-space order. Rotate and GaussianNoise
    are only available to fixed deployed policies.
    """

    IDENTICAL = 'Identical'
    BRIGHTNESS = 'Brightness'
    CONTRAST = 'Contrast'
    HUE = 'Hue'
    SATURATION = 'Saturation'
    SOLARIZE = 'Solarize'
    GAUSSIAN_BLUR = 'GaussianBlur'
    POSTERIZE = 'Posterize'
    GRAY = 'Gray'
    SHARPNESS = 'Sharpness'
    ROTATE = 'Rotate'
    GAUSSIAN_NOISE = 'GaussianNoise'

    @property
    def index(self) -> int:
        return OP_ORDER.index(self)


DEPLOY_ONLY_OPS = frozenset({AugOpKind.ROTATE, AugOpKind.GAUSSIAN_NOISE})
OP_ORDER: List[AugOpKind] = [kind for kind in AugOpKind if kind not in DEPLOY_ONLY_OPS]
NUM_OPS = len(OP_ORDER)


class MagnitudeSpec(BaseModel):
    """Magnitude range of one operation.

    GaussianBlur stores the sampling range used by random policies; its searched magnitude is a
    softplus reparameterization with no upper bound.
    """

    kind: AugOpKind
    low: float = 0.0
    high: float = 0.0
    parameter_count: int = 1

    @model_validator(mode='after')
    def check_range(self) -> 'MagnitudeSpec':
        if self.parameter_count and not self.low < self.high:
            raise ValueError(f'{self.kind.value}: low {self.low} must be below high {self.high}')
        return self

    def contains(self, value: float, tol: float = 1e-6) -> bool:
        if self.parameter_count == 0:
            return True
        if self.kind == AugOpKind.GAUSSIAN_BLUR:
            return value >= -tol and math.isfinite(value)
        return self.low - tol <= value <= self.high + tol


MAGNITUDE_SPECS: Dict[AugOpKind, MagnitudeSpec] = {
    AugOpKind.IDENTICAL: MagnitudeSpec(kind=AugOpKind.IDENTICAL, parameter_count=0),
    AugOpKind.BRIGHTNESS: MagnitudeSpec(kind=AugOpKind.BRIGHTNESS, low=0.0, high=1.0),
    AugOpKind.CONTRAST: MagnitudeSpec(kind=AugOpKind.CONTRAST, low=0.0, high=1.0),
    AugOpKind.HUE: MagnitudeSpec(kind=AugOpKind.HUE, low=-math.pi, high=math.pi),
    AugOpKind.SATURATION: MagnitudeSpec(kind=AugOpKind.SATURATION, low=0.0, high=2.0),
    AugOpKind.SOLARIZE: MagnitudeSpec(kind=AugOpKind.SOLARIZE, low=0.0, high=1.0),
    AugOpKind.GAUSSIAN_BLUR: MagnitudeSpec(kind=AugOpKind.GAUSSIAN_BLUR, low=0.0, high=2.0),
    AugOpKind.POSTERIZE: MagnitudeSpec(kind=AugOpKind.POSTERIZE, low=0.0, high=8.0),
    AugOpKind.GRAY: MagnitudeSpec(kind=AugOpKind.GRAY, parameter_count=0),
    AugOpKind.SHARPNESS: MagnitudeSpec(kind=AugOpKind.SHARPNESS, low=0.0, high=1.0),
    AugOpKind.ROTATE: MagnitudeSpec(kind=AugOpKind.ROTATE, low=-180.0, high=180.0),
    AugOpKind.GAUSSIAN_NOISE: MagnitudeSpec(kind=AugOpKind.GAUSSIAN_NOISE, low=0.0, high=0.2),
}


class SamplingMode(str, Enum):
    """How a deployed sub-policy picks its operation."""

    CATEGORICAL = 'categorical'
    ARGMAX = 'argmax'


class PolicyOp(BaseModel):
    """One (operation, probability, magnitude) entry of a deployed sub-policy."""

    kind: AugOpKind
    prob: float = Field(..., ge=0.0, le=1.0 + 1e-6)
    magnitude: Optional[float] = None
    magnitude_high: Optional[float] = None

    @model_validator(mode='after')
    def check_magnitude(self) -> 'PolicyOp':
        spec = MAGNITUDE_SPECS[self.kind]
        if spec.parameter_count == 0:
            if self.magnitude is not None or self.magnitude_high is not None:
                raise ValueError(f'{self.kind.value} takes no magnitude')
            return self
        if self.magnitude is None:
            raise ValueError(f'{self.kind.value} requires a magnitude')
        for value in (self.magnitude, self.magnitude_high):
            if value is not None and not spec.contains(value):
                raise ValueError(f'{self.kind.value} magnitude {value} outside [{spec.low}, {spec.high}]')
        if self.magnitude_high is not None and self.magnitude_high < self.magnitude:
            raise ValueError(
                f'{self.kind.value} interval [{self.magnitude}, {self.magnitude_high}] is reversed'
            )
        return self


class SubPolicy(BaseModel):
    """A categorical distribution over operations for one composition slot."""

    ops: List[PolicyOp]

    @field_validator('ops')
    @classmethod
    def check_total(cls, ops: List[PolicyOp]) -> List[PolicyOp]:
        if not ops:
            raise ValueError('A sub-policy needs at least one operation')
        total = sum(op.prob for op in ops)
        if total > 1.0 + 1e-6:
            raise ValueError(f'Sub-policy probabilities sum to {total:.6f} > 1')
        return ops

    @property
    def residual(self) -> float:
        """Probability mass not listed, applied as Identical."""
        return max(0.0, 1.0 - sum(op.prob for op in self.ops))


class DeployedPolicy(BaseModel):
    """A frozen policy: sub-policies applied in index order, plus the sampling mode."""

    version: int = 1
    mode: SamplingMode = SamplingMode.CATEGORICAL
    subpolicies: List[SubPolicy]
    provenance: Optional[Dict[str, Any]] = Field(
        None, description='Config hash and seed of the run that produced the policy.'
    )

    @field_validator('version')
    @classmethod
    def check_version(cls, version: int) -> int:
        if version != 1:
            raise ValueError(f'Unsupported policy version {version}')
        return version


class LIDEstimate(BaseModel):
    """Intrinsic-dimension estimate for one query point."""

    query_index: int
    estimate: float
    neighbor_distances: List[float]
    collapsed: bool = False


class MetricsRecord(BaseModel):
    """One row of the metrics stream.

    Wall-clock seconds and collapse flags are written as their own metric rows.
    """

    run_id: str
    stage: str
    epoch: int
    metric: str
    value: float
