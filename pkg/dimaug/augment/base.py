"""Initial (non-learned) view generation: random resized crop and horizontal flip.

These run on plain numpy arrays; crop parameters are not differentiable.
"""

import math
from typing import Tuple

import numpy as np

from dimaug.config import BaseAugmentConfig


def bilinear_resize(image: np.ndarray, height: int, width: int) -> np.ndarray:
    """Resize a (C, H, W) array with half-pixel-centre bilinear interpolation.

    Equal input and output sizes return an exact copy.
    """
    c, h, w = image.shape
    if (h, w) == (height, width):
        return image.copy()

    def axis_weights(n_in: int, n_out: int):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0, n_in - 1)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = (src - lo).astype(image.dtype)
        return lo, hi, frac

    r_lo, r_hi, r_frac = axis_weights(h, height)
    c_lo, c_hi, c_frac = axis_weights(w, width)
    rows = image[:, r_lo, :] * (1 - r_frac)[None, :, None] + image[:, r_hi, :] * r_frac[None, :, None]
    out = rows[:, :, c_lo] * (1 - c_frac)[None, None, :] + rows[:, :, c_hi] * c_frac[None, None, :]
    return out.astype(image.dtype)


def sample_crop(
    height: int,
    width: int,
    rng: np.random.Generator,
    scale: Tuple[float, float],
    ratio: Tuple[float, float],
    attempts: int = 10,
) -> Tuple[int, int, int, int]:
    """Pick (top, left, crop_h, crop_w) covering a random area fraction and aspect ratio.

    Falls back to the whole image when no attempt fits inside it.
    """
    area = height * width
    log_ratio = (math.log(ratio[0]), math.log(ratio[1]))
    for _ in range(attempts):
        target = area * rng.uniform(scale[0], scale[1])
        aspect = math.exp(rng.uniform(log_ratio[0], log_ratio[1]))
        crop_w = int(round(math.sqrt(target * aspect)))
        crop_h = int(round(math.sqrt(target / aspect)))
        if 0 < crop_w <= width and 0 < crop_h <= height:
            top = int(rng.integers(0, height - crop_h + 1))
            left = int(rng.integers(0, width - crop_w + 1))
            return top, left, crop_h, crop_w
    return 0, 0, height, width


def random_resized_crop(
    image: np.ndarray,
    rng: np.random.Generator,
    resolution: int,
    config: BaseAugmentConfig,
) -> np.ndarray:
    """Crop a random area and aspect ratio, then resize to ``resolution``."""
    _, h, w = image.shape
    top, left, ch, cw = sample_crop(h, w, rng, config.scale, config.ratio)
    return bilinear_resize(image[:, top : top + ch, left : left + cw], resolution, resolution)


def _view(image: np.ndarray, rng: np.random.Generator, resolution: int, config: BaseAugmentConfig) -> np.ndarray:
    if config.kind == 'rotation':
        view = np.rot90(bilinear_resize(image, resolution, resolution), k=int(rng.integers(4)), axes=(1, 2))
    else:
        view = random_resized_crop(image, rng, resolution, config)
    if rng.random() < config.flip_prob:
        view = view[:, :, ::-1]
    return np.ascontiguousarray(view)


def base_augment(
    image: np.ndarray,
    rng: np.random.Generator,
    resolution: int,
    config: BaseAugmentConfig = BaseAugmentConfig(),
) -> Tuple[np.ndarray, np.ndarray]:
    """Produce two independent views of one (C, H, W) image.

    Args:
        image: Pixels in [0, 1].
        rng: Source of crop, rotation and flip draws.
        resolution: Output side length.
        config: Crop scale/ratio, flip probability and view kind.

    Returns:
        Tuple[np.ndarray, np.ndarray]: Two (C, resolution, resolution) views.
    """
    return _view(image, rng, resolution, config), _view(image, rng, resolution, config)


def base_augment_batch(
    images: np.ndarray,
    rng: np.random.Generator,
    resolution: int,
    config: BaseAugmentConfig = BaseAugmentConfig(),
) -> Tuple[np.ndarray, np.ndarray]:
    """Apply ``base_augment`` image by image; returns two (N, C, R, R) arrays."""
    first, second = zip(*(base_augment(img, rng, resolution, config) for img in images))
    return np.stack(first), np.stack(second)


def rotate_batch(images: np.ndarray, rotations: np.ndarray) -> np.ndarray:
    """Rotate each (C, H, W) image by ``rotations[i]`` quarter turns."""
    return np.stack([np.rot90(img, k=int(r), axes=(1, 2)) for img, r in zip(images, rotations)])
