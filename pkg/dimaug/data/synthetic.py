"""Procedural toy corpus and synthetic manifolds with known intrinsic dimension."""

from typing import Literal, Optional

import numpy as np
from loguru import logger

from dimaug.data.corpus import ImageCorpus


ManifoldKind = Literal['uniform-ball', 'gaussian', 'segment']

TOY_RESOLUTION = 32
TOY_CLASSES = ('warm-coarse', 'green-medium', 'blue-fine')
_BASE_HUES = (0.0, 2 * np.pi / 3, 4 * np.pi / 3)
_STRIPE_FREQUENCIES = (2.0, 4.0, 8.0)
_BLOB_COUNTS = (2, 5, 10)
_PHASES = np.array([0.0, 2 * np.pi / 3, 4 * np.pi / 3])
# Light falls off from the top edge (1.2) to the bottom edge (0.4).
_LIGHT_TOP = 1.2
_LIGHT_FALLOFF = 0.8


def _hue_color(hue: float) -> np.ndarray:
    return 0.5 + 0.35 * np.cos(hue - _PHASES)


def _texture(label: int, rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / size
    angle = rng.uniform(0, np.pi)
    freq = _STRIPE_FREQUENCIES[label]
    stripes = 0.5 + 0.5 * np.sin(2 * np.pi * freq * (xx * np.cos(angle) + yy * np.sin(angle)) + rng.uniform(0, 2 * np.pi))
    blobs = np.zeros((size, size))
    for _ in range(_BLOB_COUNTS[label]):
        cy, cx = rng.uniform(0, 1, size=2)
        radius = rng.uniform(0.04, 0.08)
        blobs += np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * radius**2))
    color = _hue_color(_BASE_HUES[label] + rng.uniform(-0.3, 0.3))
    shade = (0.6 + 0.3 * stripes + 0.3 * np.clip(blobs, 0, 1)) * (_LIGHT_TOP - _LIGHT_FALLOFF * yy)
    image = color[:, None, None] * shade[None, :, :]
    contrast = rng.uniform(0.8, 1.2)
    brightness = rng.uniform(-0.1, 0.1)
    image = (image - 0.5) * contrast + 0.5 + brightness
    return np.clip(image, 0.0, 1.0)


def make_toy_corpus(seed: int = 0, n_per_class: int = 64, resolution: int = TOY_RESOLUTION) -> ImageCorpus:
    """Three classes of procedural textures with per-image photometric jitter.

    Classes differ in base hue, stripe frequency and blob density; labels are included and
    items are interleaved by class. Every image is lit from the top, so the corpus has an
    upright orientation that rotation prediction can pick up.
    """
    if n_per_class < 1:
        raise ValueError(f'n_per_class must be positive, got {n_per_class}')
    rng = np.random.default_rng(seed)
    labels = np.tile(np.arange(len(TOY_CLASSES)), n_per_class)
    images = np.stack([_texture(int(c), rng, resolution) for c in labels]).astype(np.float32)
    logger.debug(f'Generated toy corpus: {len(images)} images, seed {seed}')
    return ImageCorpus(
        images=images,
        ids=[f'toy-{i:05d}' for i in range(len(images))],
        labels=labels.astype(np.int64),
        source=f'toy:seed={seed}',
        class_names=list(TOY_CLASSES),
    )


def orthonormal_embedding(d: int, ambient: int, rng: np.random.Generator) -> np.ndarray:
    """Random (ambient, d) matrix with orthonormal columns."""
    if ambient < d:
        raise ValueError(f'ambient dimension {ambient} is smaller than d={d}')
    q, r = np.linalg.qr(rng.standard_normal((ambient, d)))
    return q * np.sign(np.diag(r))


def make_manifold(
    seed: int,
    kind: ManifoldKind,
    n: int,
    d: int = 1,
    ambient: Optional[int] = None,
) -> np.ndarray:
    """Sample n points with known intrinsic dimension.

    Args:
        seed: Random seed.
        kind: 'uniform-ball' (uniform in the unit d-ball), 'gaussian' (standard normal in R^d)
            or 'segment' (uniform on [0, 1], dimension 1).
        n: Number of points.
        d: Intrinsic dimension (ignored for 'segment').
        ambient: Embed isometrically into this many dimensions via a random orthonormal map.

    Returns:
        np.ndarray: (n, ambient or d) float64 points.
    """
    if d < 1:
        raise ValueError(f'Intrinsic dimension must be >= 1, got {d}')
    rng = np.random.default_rng(seed)
    if kind == 'uniform-ball':
        directions = rng.standard_normal((n, d))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        points = directions * rng.uniform(0, 1, size=(n, 1)) ** (1.0 / d)
    elif kind == 'gaussian':
        points = rng.standard_normal((n, d))
    elif kind == 'segment':
        points = rng.uniform(0, 1, size=(n, 1))
    else:
        raise ValueError(f'Unknown manifold kind {kind!r}')
    if ambient is not None and ambient != points.shape[1]:
        points = points @ orthonormal_embedding(points.shape[1], ambient, rng).T
    return points
