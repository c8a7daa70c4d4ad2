"""Differentiable photometric operations.

Every operation maps an NCHW batch in [0, 1] and a scalar magnitude (in its natural units) to
a batch of the same shape, clamped to [0, 1]. Posterize and the Solarize threshold take their
forward value from the exact discrete operation and their gradient from a straight-through
surrogate.

Rotate and GaussianNoise are not differentiable in their magnitude and only serve fixed
deployed policies.
"""

import math
from typing import Callable, Dict, Optional, Union

import numpy as np
from scipy import ndimage

from dimaug.exceptions import AugmentationError
from dimaug.models import MAGNITUDE_SPECS, AugOpKind
from dimaug.tensor import ops
from dimaug.tensor.core import Tensor


Magnitude = Union[Tensor, float]

LUMA = np.array([0.299, 0.587, 0.114])
_RGB_TO_YIQ = np.array(
    [
        [0.299, 0.587, 0.114],
        [0.595716, -0.274453, -0.321263],
        [0.211456, -0.522591, 0.311135],
    ]
)
_YIQ_TO_RGB = np.linalg.inv(_RGB_TO_YIQ)
# M(theta) = HUE_A0 + cos(theta) HUE_A1 + sin(theta) HUE_A2, acting on RGB column vectors.
HUE_A0 = _YIQ_TO_RGB @ np.diag([1.0, 0.0, 0.0]) @ _RGB_TO_YIQ
HUE_A1 = _YIQ_TO_RGB @ np.diag([0.0, 1.0, 1.0]) @ _RGB_TO_YIQ
HUE_A2 = _YIQ_TO_RGB @ np.array([[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]]) @ _RGB_TO_YIQ

SHARPEN_SMOOTH = np.array([[1.0, 1.0, 1.0], [1.0, 5.0, 1.0], [1.0, 1.0, 1.0]]) / 13.0
MIN_BLUR_SIGMA = 1e-3


def hue_rotation_matrix(theta: Magnitude) -> Tensor:
    """Return the 3x3 RGB matrix rotating chroma by ``theta`` radians."""
    theta = ops.as_tensor(theta)
    dtype = theta.dtype
    a0 = Tensor(HUE_A0, dtype=dtype)
    a1 = Tensor(HUE_A1, dtype=dtype)
    a2 = Tensor(HUE_A2, dtype=dtype)
    return ops.add(a0, ops.add(ops.mul(ops.cos(theta), a1), ops.mul(ops.sin(theta), a2)))


def _apply_color_matrix(x: Tensor, matrix: Tensor) -> Tensor:
    nhwc = ops.transpose(x, (0, 2, 3, 1))
    mixed = ops.matmul(nhwc, ops.transpose(matrix))
    return ops.transpose(mixed, (0, 3, 1, 2))


def grayscale(x: Tensor) -> Tensor:
    """Luminance replicated over the three channels; gray pixels pass through unchanged."""
    weights = Tensor(LUMA.reshape(1, 3, 1, 1), dtype=x.dtype)
    luma = ops.sum(ops.mul(x, weights), axis=1, keepdims=True)
    stacked = ops.concat([luma, luma, luma], axis=1)
    data = x.data
    already_gray = (data[:, 0:1] == data[:, 1:2]) & (data[:, 1:2] == data[:, 2:3])
    return ops.where(np.broadcast_to(already_gray, x.shape), x, stacked)


def _identical(x: Tensor, m: Tensor, kernel_size: int) -> Tensor:
    return x


def _brightness(x: Tensor, m: Tensor, kernel_size: int) -> Tensor:
    return ops.add(ops.mul(ops.sub(1.0, m), x), m)


def _contrast(x: Tensor, m: Tensor, kernel_size: int) -> Tensor:
    return ops.mul(m, x)


def _hue(x: Tensor, m: Tensor, kernel_size: int) -> Tensor:
    if x.shape[1] == 1:
        return x
    return _apply_color_matrix(x, hue_rotation_matrix(m))


def _saturation(x: Tensor, m: Tensor, kernel_size: int) -> Tensor:
    if x.shape[1] == 1:
        return x
    return ops.add(ops.mul(m, x), ops.mul(ops.sub(1.0, m), grayscale(x)))


def _solarize(x: Tensor, m: Tensor, kernel_size: int) -> Tensor:
    def above(img: Tensor, threshold: Tensor) -> Tensor:
        return Tensor((img.data > threshold.data).astype(img.dtype), dtype=img.dtype)

    selected = ops.straight_through(above, lambda img, threshold: ops.sub(img, threshold), x, m)
    return ops.add(x, ops.mul(selected, ops.sub(1.0, ops.mul(2.0, x))))


def _posterize(x: Tensor, m: Tensor, kernel_size: int) -> Tensor:
    def quantize(img: Tensor, bits: Tensor) -> Tensor:
        n_bits = int(np.clip(np.round(bits.item()), 0, 8))
        mask = np.uint8((0xFF << (8 - n_bits)) & 0xFF)
        levels = np.round(np.clip(img.data, 0.0, 1.0) * 255.0).astype(np.uint8)
        return Tensor((levels & mask) / 255.0, dtype=img.dtype)

    def surrogate(img: Tensor, bits: Tensor) -> Tensor:
        step = ops.exp(ops.mul(ops.sub(8.0, bits), math.log(2.0)))
        return ops.sub(img, ops.div(ops.sub(step, 1.0), 2 * 255.0))

    return ops.straight_through(quantize, surrogate, x, m)


def gaussian_kernel(sigma: Tensor, kernel_size: int) -> Tensor:
    """Normalized 2-D Gaussian kernel of odd ``kernel_size``, differentiable in ``sigma``."""
    center = kernel_size // 2
    offsets = Tensor(np.arange(kernel_size) - center, dtype=sigma.dtype)
    sigma = ops.clamp(sigma, low=MIN_BLUR_SIGMA)
    scaled = ops.div(offsets, sigma)
    k1 = ops.exp(ops.mul(-0.5, ops.mul(scaled, scaled)))
    k2 = ops.matmul(ops.reshape(k1, (kernel_size, 1)), ops.reshape(k1, (1, kernel_size)))
    return ops.div(k2, ops.sum(k2))


def _depthwise(x: Tensor, kernel: Tensor, mode: str) -> Tensor:
    n, c, h, w = x.shape
    size = kernel.shape[-1]
    pad = size // 2
    if mode == 'reflect' and (pad >= h or pad >= w):
        mode = 'replicate'
    flat = ops.reshape(x, (n * c, 1, h, w))
    padded = ops.pad(flat, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode=mode)
    out = ops.conv2d(padded, ops.reshape(kernel, (1, 1, size, size)))
    return ops.reshape(out, (n, c, h, w))


def _gaussian_blur(x: Tensor, m: Tensor, kernel_size: int) -> Tensor:
    return _depthwise(x, gaussian_kernel(m, kernel_size), 'reflect')


def _gray(x: Tensor, m: Tensor, kernel_size: int) -> Tensor:
    if x.shape[1] == 1:
        return x
    return grayscale(x)


def _sharpness(x: Tensor, m: Tensor, kernel_size: int) -> Tensor:
    smooth = _depthwise(x, Tensor(SHARPEN_SMOOTH, dtype=x.dtype), 'replicate')
    return ops.add(x, ops.mul(m, ops.sub(x, smooth)))


def _rotate(x: Tensor, m: Tensor, rng: Optional[np.random.Generator]) -> Tensor:
    rotated = ndimage.rotate(x.data, m.item(), axes=(3, 2), reshape=False, order=1, mode='reflect')
    return Tensor(rotated.astype(x.dtype), dtype=x.dtype)


def _gaussian_noise(x: Tensor, m: Tensor, rng: Optional[np.random.Generator]) -> Tensor:
    if rng is None:
        raise AugmentationError('GaussianNoise needs a random generator')
    return ops.add(x, Tensor(rng.normal(scale=m.item(), size=x.shape), dtype=x.dtype))


_DEPLOY_OPS: Dict[AugOpKind, Callable[[Tensor, Tensor, Optional[np.random.Generator]], Tensor]] = {
    AugOpKind.ROTATE: _rotate,
    AugOpKind.GAUSSIAN_NOISE: _gaussian_noise,
}

_OPS: Dict[AugOpKind, Callable[[Tensor, Tensor, int], Tensor]] = {
    AugOpKind.IDENTICAL: _identical,
    AugOpKind.BRIGHTNESS: _brightness,
    AugOpKind.CONTRAST: _contrast,
    AugOpKind.HUE: _hue,
    AugOpKind.SATURATION: _saturation,
    AugOpKind.SOLARIZE: _solarize,
    AugOpKind.GAUSSIAN_BLUR: _gaussian_blur,
    AugOpKind.POSTERIZE: _posterize,
    AugOpKind.GRAY: _gray,
    AugOpKind.SHARPNESS: _sharpness,
}


def apply_aug(
    images: Tensor,
    kind: AugOpKind,
    magnitude: Magnitude = 0.0,
    blur_kernel_size: int = 9,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Apply one augmentation to an NCHW batch.

    Args:
        images: Batch with 1 or 3 channels, values in [0, 1].
        kind: Operation to apply.
        magnitude: Scalar in the operation's units (ignored for Identical and Gray).
        blur_kernel_size: Odd GaussianBlur kernel width.
        rng: Noise source for GaussianNoise.

    Returns:
        Tensor: Augmented batch of the same shape, clamped to [0, 1].

    Raises:
        AugmentationError: If the image layout or magnitude is invalid.
    """
    if images.ndim != 4 or images.shape[1] not in (1, 3):
        raise AugmentationError(f'{kind.value}: expected NCHW with 1 or 3 channels, got {images.shape}')
    spec = MAGNITUDE_SPECS[kind]
    m = ops.as_tensor(magnitude, like=images)
    if spec.parameter_count:
        if m.size != 1:
            raise AugmentationError(f'{kind.value}: magnitude must be scalar, got shape {m.shape}')
        value = float(m.data.reshape(-1)[0])
        if not spec.contains(value):
            bound = '[0, inf)' if kind == AugOpKind.GAUSSIAN_BLUR else f'[{spec.low}, {spec.high}]'
            raise AugmentationError(f'{kind.value}: magnitude {value} outside {bound}')
        m = ops.reshape(m, ())
    if kind == AugOpKind.IDENTICAL:
        return images
    if kind in _DEPLOY_OPS:
        return ops.clamp(_DEPLOY_OPS[kind](images, m, rng), 0.0, 1.0)
    return ops.clamp(_OPS[kind](images, m, blur_kernel_size), 0.0, 1.0)
