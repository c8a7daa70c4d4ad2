"""Convolutional encoder f and projector g."""

from typing import Optional

import numpy as np

from dimaug.config import EncoderConfig
from dimaug.exceptions import TensorShapeError
from dimaug.tensor import ops
from dimaug.tensor.core import Tensor, no_grad
from dimaug.tensor.nn import MLP, ConvBlock, Module, global_avg_pool


class Encoder(Module):
    """Stack of conv blocks followed by global average pooling.

    Attributes:
        resolution: Expected input side length.
        feature_dim: Output representation width d.
    """

    def __init__(self, config: EncoderConfig, resolution: int, rng: np.random.Generator):
        """Build conv blocks for the configured channel widths."""
        super().__init__()
        widths = [config.in_channels] + list(config.channels)
        self.blocks = [ConvBlock(a, b, rng) for a, b in zip(widths[:-1], widths[1:])]
        self.in_channels = config.in_channels
        self.resolution = resolution
        self.feature_dim = widths[-1]

    def forward(self, x: Tensor) -> Tensor:
        expected = (self.in_channels, self.resolution, self.resolution)
        if x.ndim != 4 or x.shape[1:] != expected:
            raise TensorShapeError(f'encoder expects (N, {expected[0]}, {expected[1]}, {expected[2]}), got {x.shape}')
        for block in self.blocks:
            x = block(x)
        return global_avg_pool(x)


class Projector(Module):
    """MLP head whose outputs are L2-normalized embeddings."""

    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        """Build the d -> hidden -> e perceptron."""
        super().__init__()
        self.mlp = MLP([config.feature_dim, config.projector_hidden, config.projection_dim], rng)

    def forward(self, z: Tensor) -> Tensor:
        return ops.l2_normalize(self.mlp(z), axis=1)


def build_models(config: EncoderConfig, resolution: int, seed: Optional[int]) -> tuple:
    """Create a freshly initialized (encoder, projector) pair from one seed."""
    rng = np.random.default_rng(seed)
    return Encoder(config, resolution, rng), Projector(config, rng)


def encode(images: Tensor, encoder: Encoder) -> Tensor:
    """Representations of an image batch."""
    return encoder(images)


def project(z: Tensor, projector: Projector) -> Tensor:
    """Unit-norm projections of representations."""
    return projector(z)


def extract_features(encoder: Encoder, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Eval-mode representations for a whole array, without recording; restores the mode."""
    was_training = encoder.training
    encoder.eval()
    chunks = []
    try:
        with no_grad():
            for start in range(0, len(images), batch_size):
                chunks.append(encoder(Tensor(images[start : start + batch_size])).data)
    finally:
        encoder.train(was_training)
    return np.concatenate(chunks, axis=0) if chunks else np.zeros((0, encoder.feature_dim))
