"""Shared fixtures: a tiny run configuration, a toy corpus and precision switches."""

from pathlib import Path

import numpy as np
import pytest

from dimaug.config import RunConfig
from dimaug.data.synthetic import make_toy_corpus
from dimaug.tensor.core import precision


TINY_RESOLUTION = 8


def tiny_config_dict(out_dir: Path, **overrides) -> dict:
    """Settings small enough for a full pipeline run in seconds."""
    raw = {
        'seed': 0,
        'out_dir': str(out_dir),
        'lid': {'k': 4},
        'augment': {'n_subpolicies': 2},
        'encoder': {'channels': [4, 8], 'projector_hidden': 16, 'projection_dim': 8},
        'train': {'batch_size': 12, 'epochs': 2, 'lr': 0.01, 'resolution': TINY_RESOLUTION, 'prefetch': 0},
        'search': {'epochs': 2, 'batch_size': 8, 'lr': 0.05, 'rotation_head_epochs': 3},
        'probe': {'epochs': 10, 'batch_size': 16, 'knn_k': 3},
        'data': {'toy_per_class': 8},
    }
    for section, values in overrides.items():
        if isinstance(values, dict):
            raw.setdefault(section, {}).update(values)
        else:
            raw[section] = values
    return raw


@pytest.fixture
def float64():
    with precision('float64'):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config(tmp_path) -> RunConfig:
    return RunConfig.model_validate(tiny_config_dict(tmp_path / 'run'))


@pytest.fixture
def toy_corpus():
    return make_toy_corpus(seed=0, n_per_class=8, resolution=TINY_RESOLUTION)


@pytest.fixture
def random_images(rng):
    """Four 3-channel 8x8 images in [0, 1]."""
    return rng.uniform(0.05, 0.95, size=(4, 3, TINY_RESOLUTION, TINY_RESOLUTION))
