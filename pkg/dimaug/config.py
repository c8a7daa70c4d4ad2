"""Run configuration models.

Every hyperparameter of the pretrain, search, retrain and evaluation stages lives in one of the
pydantic models below; ``RunConfig`` aggregates them and is what config files deserialize into.
"""

import hashlib
import json
import tomllib
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from dimaug.exceptions import ConfigurationError
from dimaug.models import DEPLOY_ONLY_OPS, AugOpKind, SamplingMode
from dimaug.settings import AppSettings


class _Strict(BaseModel):
    model_config = ConfigDict(extra='forbid')


class LIDConfig(_Strict):
    """Neighbourhood and estimator settings for LID estimation."""

    k: int = Field(16, ge=2, description='Neighbourhood size.')
    estimator: Literal['mom', 'mle'] = 'mom'
    distance: Literal['euclidean', 'normalized'] = Field(
        'euclidean', description="'normalized' L2-normalizes representations before distances."
    )
    epsilon: float = Field(1e-8, gt=0)
    max_estimate: float = Field(1e6, gt=1)


class AugmentConfig(_Strict):
    """Search-space settings for learnable policies."""

    n_subpolicies: int = Field(5, ge=1)
    policy_temperature: float = Field(0.1, gt=0)
    blur_kernel_size: int = Field(9, ge=3)
    excluded_ops: List[AugOpKind] = Field(default_factory=list)
    finalize_mode: SamplingMode = SamplingMode.CATEGORICAL
    finalize_modes: List[SamplingMode] = Field(
        default_factory=list, description='Extra finalization modes evaluated by the pipeline.'
    )

    @field_validator('blur_kernel_size')
    @classmethod
    def odd_kernel(cls, size: int) -> int:
        if size % 2 == 0:
            raise ValueError(f'blur_kernel_size must be odd, got {size}')
        return size

    @field_validator('excluded_ops')
    @classmethod
    def keep_identical(cls, ops: List[AugOpKind]) -> List[AugOpKind]:
        if AugOpKind.IDENTICAL in ops:
            raise ValueError('Identical cannot be excluded from the search space')
        outside = [kind.value for kind in ops if kind in DEPLOY_ONLY_OPS]
        if outside:
            raise ValueError(f'{outside} are not part of the search space')
        return ops


class BaseAugmentConfig(_Strict):
    """Initial augmentation applied before any policy (crop/flip, or rotation/flip)."""

    kind: Literal['crop_flip', 'rotation'] = 'crop_flip'
    scale: Tuple[float, float] = (0.2, 1.0)
    ratio: Tuple[float, float] = (3 / 4, 4 / 3)
    flip_prob: float = Field(0.5, ge=0, le=1)

    @field_validator('scale')
    @classmethod
    def valid_scale(cls, scale: Tuple[float, float]) -> Tuple[float, float]:
        if not 0 < scale[0] <= scale[1] <= 1:
            raise ValueError(f'scale must satisfy 0 < low <= high <= 1, got {scale}')
        return scale


class EncoderConfig(_Strict):
    """Convolutional encoder and projector widths."""

    in_channels: int = Field(3, ge=1)
    channels: List[int] = Field(default_factory=lambda: [32, 64, 128, 256])
    projector_hidden: int = Field(256, ge=1)
    projection_dim: int = Field(128, ge=1)

    @property
    def feature_dim(self) -> int:
        return self.channels[-1]


class TrainConfig(_Strict):
    """Contrastive pretraining settings."""

    batch_size: int = Field(128, ge=2)
    epochs: int = Field(50, ge=1)
    optimizer: Literal['adam', 'sgd'] = 'adam'
    lr: float = Field(1e-3, ge=0)
    weight_decay: float = Field(1e-6, ge=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    temperature: float = Field(0.2, gt=0, description='NT-Xent temperature.')
    resolution: int = Field(32, ge=4)
    prefetch: int = Field(default_factory=lambda: AppSettings.PREFETCH_DEPTH, ge=0)


class SearchConfig(_Strict):
    """Policy search settings."""

    epochs: int = Field(10, ge=1)
    lr: float = Field(0.01, ge=0)
    optimizer: Literal['adam', 'sgd'] = 'adam'
    objective: Literal['dda', 'selfaugment'] = 'dda'
    batch_size: Optional[int] = Field(None, ge=2, description='Defaults to the pretraining batch.')
    rotation_head_epochs: int = Field(30, ge=1)
    rotation_head_lr: float = Field(0.05, gt=0)


class ProbeConfig(_Strict):
    """Linear-probe and kNN evaluation settings."""

    lr: float = Field(0.1, gt=0)
    weight_decay: float = Field(1e-4, ge=0)
    batch_size: int = Field(256, ge=1)
    epochs: int = Field(80, ge=1)
    test_fraction: float = Field(0.2, gt=0, lt=1)
    knn_k: int = Field(5, ge=1)


class DataConfig(_Strict):
    """Corpus sources; without a path the procedural toy corpus is used."""

    path: Optional[str] = None
    labeled_path: Optional[str] = None
    manifest: Optional[str] = None
    toy_per_class: int = Field(64, ge=1)


class RunConfig(_Strict):
    """All settings of one pipeline run."""

    seed: int = 0
    out_dir: str = Field(default_factory=lambda: AppSettings.DEFAULT_OUT_DIR)
    lid: LIDConfig = Field(default_factory=LIDConfig)
    augment: AugmentConfig = Field(default_factory=AugmentConfig)
    base_augment: BaseAugmentConfig = Field(default_factory=BaseAugmentConfig)
    encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    search: SearchConfig = Field(default_factory=SearchConfig)
    probe: ProbeConfig = Field(default_factory=ProbeConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    baselines: List[Literal['random', 'simclr', 'excessive', 'manual']] = Field(default_factory=list)

    @property
    def search_batch_size(self) -> int:
        return self.search.batch_size or self.train.batch_size

    @model_validator(mode='after')
    def check_cross_fields(self) -> 'RunConfig':
        if self.search_batch_size <= self.lid.k:
            raise ValueError(
                f'search batch size {self.search_batch_size} must exceed LID k={self.lid.k}'
            )
        downsample = 2 ** len(self.encoder.channels)
        if self.train.resolution < downsample:
            raise ValueError(
                f'resolution {self.train.resolution} too small for {len(self.encoder.channels)} '
                f'pooling blocks (needs >= {downsample})'
            )
        return self


def config_hash(config: BaseModel) -> str:
    """Return the first 12 hex chars of SHA-256 over the canonical JSON dump."""
    canonical = json.dumps(config.model_dump(mode='json'), sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()[:12]


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """Read a RunConfig from a JSON or TOML file.

    Args:
        path: File path ending in .json or .toml.

    Returns:
        RunConfig: The validated configuration.

    Raises:
        ConfigurationError: If the file is missing, unparsable or invalid.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f'Config file not found: {path}')
    try:
        if path.suffix == '.toml':
            with path.open('rb') as f:
                raw = tomllib.load(f)
        elif path.suffix == '.json':
            raw = json.loads(path.read_text(encoding='utf-8'))
        else:
            raise ConfigurationError(f'Unsupported config format {path.suffix!r} for {path}')
        config = RunConfig.model_validate(raw)
    except ConfigurationError:
        raise
    except (ValidationError, ValueError, tomllib.TOMLDecodeError) as e:
        logger.exception(f'Error loading config {path}: {str(e)}')
        raise ConfigurationError(f'Invalid config {path}: {str(e)}') from e
    logger.info(f'Loaded config {path} (hash {config_hash(config)})')
    return config
