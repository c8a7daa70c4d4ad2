"""Rotation-prediction proxy head used by the min-max search objective."""

from typing import Optional, Tuple

import numpy as np
from loguru import logger

from dimaug.augment.base import base_augment_batch, rotate_batch
from dimaug.config import RunConfig
from dimaug.contrastive.encoder import Encoder, extract_features
from dimaug.contrastive.losses import cross_entropy
from dimaug.data.loader import batch_indices
from dimaug.tensor.core import Tensor, backward
from dimaug.tensor.nn import Linear
from dimaug.tensor.optim import SGD


N_ROTATIONS = 4


def rotated_copies(images: np.ndarray, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Rotate every image by a random multiple of 90 degrees; returns (images, labels)."""
    labels = rng.integers(N_ROTATIONS, size=len(images))
    return rotate_batch(images, labels).astype(images.dtype), labels


def train_rotation_head(
    encoder: Encoder,
    images: np.ndarray,
    config: RunConfig,
    seed: Optional[int] = None,
) -> Tuple[Linear, float]:
    """Fit a 4-way linear rotation classifier on frozen features of base-augmented images.

    Returns:
        tuple: The frozen head and its accuracy on the training features.
    """
    rng = np.random.default_rng(config.seed if seed is None else seed)
    view, _ = base_augment_batch(images, rng, config.train.resolution, config.base_augment)
    rotated, labels = rotated_copies(view, rng)
    feats = extract_features(encoder, rotated)
    mean = feats.mean(axis=0, keepdims=True)
    std = feats.std(axis=0, keepdims=True) + 1e-6

    head = Linear(encoder.feature_dim, N_ROTATIONS, rng)
    optimizer = SGD(head.parameters(), lr=config.search.rotation_head_lr, momentum=0.9)
    x = (feats - mean) / std
    for _ in range(config.search.rotation_head_epochs):
        for idx in batch_indices(len(x), config.train.batch_size, rng, min_batch=1):
            loss = cross_entropy(head(Tensor(x[idx])), labels[idx])
            optimizer.step(backward(loss))

    # Fold the standardization into the head so it consumes raw encoder features.
    head.weight.data = (head.weight.data / std.reshape(-1, 1)).astype(head.weight.dtype)
    head.bias.data = (head.bias.data - (mean / std) @ (head.weight.data * std.reshape(-1, 1))).reshape(-1).astype(
        head.bias.dtype
    )
    predictions = np.argmax(feats @ head.weight.data + head.bias.data, axis=1)
    accuracy = float(np.mean(predictions == labels))
    head.freeze()
    logger.info(f'Rotation head accuracy {accuracy:.4f} on {len(labels)} frozen features')
    return head, accuracy
