import colorsys
import math

import numpy as np
import pytest

from dimaug.augment.ops import apply_aug, gaussian_kernel, grayscale, hue_rotation_matrix
from dimaug.exceptions import AugmentationError
from dimaug.models import MAGNITUDE_SPECS, OP_ORDER, AugOpKind
from dimaug.tensor import ops
from dimaug.tensor.core import Tensor, backward, precision
from dimaug.tensor.gradcheck import check_gradients


def _byte_image(rng, shape=(2, 3, 6, 6)) -> np.ndarray:
    """Pixels that are exact 8-bit levels after the float32 cast."""
    levels = rng.integers(0, 256, size=shape)
    return (levels / 255.0).astype(np.float32)


class TestIdentityCases:
    """Boundary magnitudes that must leave the image untouched."""

    def test_brightness_zero(self, rng):
        x = Tensor(rng.uniform(size=(2, 3, 5, 5)))
        np.testing.assert_array_equal(apply_aug(x, AugOpKind.BRIGHTNESS, 0.0).data, x.data)

    def test_saturation_one(self, rng):
        x = Tensor(rng.uniform(size=(2, 3, 5, 5)))
        np.testing.assert_array_equal(apply_aug(x, AugOpKind.SATURATION, 1.0).data, x.data)

    def test_posterize_eight_bits(self, rng):
        x = Tensor(_byte_image(rng))
        np.testing.assert_array_equal(apply_aug(x, AugOpKind.POSTERIZE, 8.0).data, x.data)

    def test_solarize_threshold_one(self, rng):
        x = Tensor(rng.uniform(size=(2, 3, 5, 5)))
        np.testing.assert_array_equal(apply_aug(x, AugOpKind.SOLARIZE, 1.0).data, x.data)

    def test_blur_of_constant(self):
        x = Tensor(np.full((1, 3, 7, 7), 0.42))
        out = apply_aug(x, AugOpKind.GAUSSIAN_BLUR, 1.5)
        np.testing.assert_allclose(out.data, 0.42, atol=1e-5)

    def test_gray_of_gray(self, rng):
        plane = rng.uniform(size=(2, 1, 5, 5))
        x = Tensor(np.repeat(plane, 3, axis=1))
        np.testing.assert_array_equal(apply_aug(x, AugOpKind.GRAY, 0.0).data, x.data)

    def test_identical(self, rng):
        x = Tensor(rng.uniform(size=(1, 3, 4, 4)))
        assert apply_aug(x, AugOpKind.IDENTICAL) is x

    def test_contrast_one(self, rng):
        x = Tensor(rng.uniform(size=(1, 3, 4, 4)))
        np.testing.assert_array_equal(apply_aug(x, AugOpKind.CONTRAST, 1.0).data, x.data)


class TestOperationValues:
    def test_hue_pi_twice_returns_original(self, rng):
        with precision('float64'):
            x = Tensor(rng.uniform(0.4, 0.6, size=(2, 3, 4, 4)))
            once = apply_aug(x, AugOpKind.HUE, math.pi)
            twice = apply_aug(once, AugOpKind.HUE, math.pi)
        np.testing.assert_allclose(twice.data, x.data, atol=1e-9)

    def test_hue_rotation_matches_hsv_shift(self):
        pixel = np.array([0.6, 0.45, 0.4])
        with precision('float64'):
            image = Tensor(pixel.reshape(1, 3, 1, 1))
            rotated = apply_aug(image, AugOpKind.HUE, math.pi).data.reshape(3)
        h_before = colorsys.rgb_to_hsv(*pixel)[0]
        h_after = colorsys.rgb_to_hsv(*rotated)[0]
        shift = (h_after - h_before) % 1.0
        assert shift == pytest.approx(0.5, abs=0.08)

    def test_hue_matrix_zero_is_identity(self):
        with precision('float64'):
            matrix = hue_rotation_matrix(0.0).data
        np.testing.assert_allclose(matrix, np.eye(3), atol=1e-6)

    def test_hue_preserves_luma(self, rng):
        with precision('float64'):
            x = Tensor(rng.uniform(0.3, 0.7, size=(1, 3, 3, 3)))
            out = apply_aug(x, AugOpKind.HUE, 1.0)
        luma = np.array([0.299, 0.587, 0.114]).reshape(1, 3, 1, 1)
        np.testing.assert_allclose((out.data * luma).sum(axis=1), (x.data * luma).sum(axis=1), atol=1e-6)

    def test_brightness_one_is_white(self, rng):
        x = Tensor(rng.uniform(size=(1, 3, 4, 4)))
        np.testing.assert_array_equal(apply_aug(x, AugOpKind.BRIGHTNESS, 1.0).data, 1.0)

    def test_contrast_zero_is_black(self, rng):
        x = Tensor(rng.uniform(size=(1, 3, 4, 4)))
        np.testing.assert_array_equal(apply_aug(x, AugOpKind.CONTRAST, 0.0).data, 0.0)

    def test_solarize_zero_inverts(self, rng):
        x = Tensor(rng.uniform(0.01, 1.0, size=(1, 3, 4, 4)))
        np.testing.assert_allclose(apply_aug(x, AugOpKind.SOLARIZE, 0.0).data, 1.0 - x.data, atol=1e-6)

    def test_posterize_one_bit(self):
        x = Tensor(np.array([0.1, 0.49, 0.51, 0.9], dtype=np.float32).reshape(1, 1, 2, 2))
        out = apply_aug(x, AugOpKind.POSTERIZE, 1.0)
        np.testing.assert_allclose(out.data.reshape(-1), [0.0, 0.0, 128 / 255, 128 / 255], rtol=1e-6)

    def test_saturation_zero_is_grayscale(self, rng):
        x = Tensor(rng.uniform(size=(1, 3, 4, 4)))
        np.testing.assert_allclose(
            apply_aug(x, AugOpKind.SATURATION, 0.0).data, grayscale(x).data, atol=1e-6
        )

    def test_sharpness_of_constant(self):
        x = Tensor(np.full((1, 3, 5, 5), 0.3))
        np.testing.assert_allclose(apply_aug(x, AugOpKind.SHARPNESS, 1.0).data, 0.3, atol=1e-5)

    def test_gaussian_kernel_is_normalized(self):
        with precision('float64'):
            kernel = gaussian_kernel(Tensor(1.0), 9).data
        assert kernel.sum() == pytest.approx(1.0)
        np.testing.assert_allclose(kernel, kernel.T)

    @pytest.mark.parametrize('kind', [AugOpKind.HUE, AugOpKind.SATURATION, AugOpKind.GRAY])
    def test_single_channel_colour_ops_are_identity(self, kind, rng):
        x = Tensor(rng.uniform(size=(2, 1, 4, 4)))
        magnitude = MAGNITUDE_SPECS[kind].low
        np.testing.assert_array_equal(apply_aug(x, kind, magnitude).data, x.data)

    @pytest.mark.parametrize('kind', OP_ORDER)
    def test_output_in_unit_range(self, kind, rng):
        spec = MAGNITUDE_SPECS[kind]
        x = Tensor(rng.uniform(size=(2, 3, 6, 6)))
        for magnitude in (spec.low, (spec.low + spec.high) / 2, spec.high):
            out = apply_aug(x, kind, magnitude).data
            assert out.shape == x.shape
            assert out.min() >= 0.0 and out.max() <= 1.0


class TestMagnitudeValidation:
    def test_out_of_range(self, rng):
        x = Tensor(rng.uniform(size=(1, 3, 4, 4)))
        with pytest.raises(AugmentationError, match=r'Saturation: magnitude 2.5 outside \[0.0, 2.0\]'):
            apply_aug(x, AugOpKind.SATURATION, 2.5)

    def test_negative_blur(self, rng):
        x = Tensor(rng.uniform(size=(1, 3, 4, 4)))
        with pytest.raises(AugmentationError, match='GaussianBlur'):
            apply_aug(x, AugOpKind.GAUSSIAN_BLUR, -0.5)

    def test_large_blur_is_accepted(self, rng):
        x = Tensor(rng.uniform(size=(1, 3, 4, 4)))
        assert apply_aug(x, AugOpKind.GAUSSIAN_BLUR, 25.0).shape == x.shape

    def test_bad_layout(self, rng):
        with pytest.raises(AugmentationError, match='NCHW'):
            apply_aug(Tensor(rng.uniform(size=(3, 4, 4))), AugOpKind.BRIGHTNESS, 0.1)

    def test_non_scalar_magnitude(self, rng):
        x = Tensor(rng.uniform(size=(1, 3, 4, 4)))
        with pytest.raises(AugmentationError, match='scalar'):
            apply_aug(x, AugOpKind.BRIGHTNESS, Tensor([0.1, 0.2]))


class TestOperationGradients:
    @pytest.mark.parametrize('kind', [k for k in OP_ORDER if MAGNITUDE_SPECS[k].parameter_count])
    def test_magnitude_gradient_is_finite(self, kind, rng):
        spec = MAGNITUDE_SPECS[kind]
        x = Tensor(rng.uniform(size=(2, 3, 6, 6)))
        m = Tensor((spec.low + spec.high) / 2, requires_grad=True)
        grads = backward(ops.mean(apply_aug(x, kind, m)))
        assert np.isfinite(grads[m]).all()

    @pytest.mark.parametrize(
        'kind, magnitude',
        [
            (AugOpKind.BRIGHTNESS, 0.3),
            (AugOpKind.CONTRAST, 0.7),
            (AugOpKind.HUE, 0.4),
            (AugOpKind.SATURATION, 0.6),
            (AugOpKind.GAUSSIAN_BLUR, 1.2),
            (AugOpKind.SHARPNESS, 0.5),
        ],
    )
    def test_smooth_ops_match_finite_differences(self, float64, rng, kind, magnitude):
        x = Tensor(rng.uniform(0.3, 0.7, size=(1, 3, 5, 5)), requires_grad=True)
        m = Tensor(magnitude, requires_grad=True)
        weights = Tensor(rng.normal(size=(1, 3, 5, 5)))
        assert check_gradients(lambda: ops.sum(ops.mul(apply_aug(x, kind, m), weights)), [x, m]) < 1e-4

    def test_posterize_uses_surrogate_gradient(self, rng):
        x = Tensor(_byte_image(rng), requires_grad=True)
        m = Tensor(4.0, requires_grad=True)
        grads = backward(ops.sum(apply_aug(x, AugOpKind.POSTERIZE, m)))
        np.testing.assert_allclose(grads[x], 1.0)
        assert grads[m] > 0


class TestDeployOnlyOps:
    def test_not_in_search_space(self):
        assert AugOpKind.ROTATE not in OP_ORDER and AugOpKind.GAUSSIAN_NOISE not in OP_ORDER
        assert len(OP_ORDER) == 10

    def test_rotate_zero_is_identity(self, rng):
        x = Tensor(rng.uniform(size=(2, 3, 6, 6)))
        np.testing.assert_allclose(apply_aug(x, AugOpKind.ROTATE, 0.0).data, x.data, atol=1e-6)

    def test_rotate_quarter_turn(self, rng):
        x = Tensor(rng.uniform(size=(2, 3, 6, 6)))
        out = apply_aug(x, AugOpKind.ROTATE, 90.0).data
        turned = [np.rot90(x.data, k, axes=(2, 3)) for k in (1, -1)]
        assert any(np.allclose(out, t, atol=1e-5) for t in turned)

    def test_rotate_range(self, rng):
        x = Tensor(rng.uniform(size=(1, 3, 4, 4)))
        with pytest.raises(AugmentationError, match='Rotate'):
            apply_aug(x, AugOpKind.ROTATE, 200.0)

    def test_noise_needs_generator(self, rng):
        x = Tensor(rng.uniform(size=(1, 3, 4, 4)))
        with pytest.raises(AugmentationError, match='random generator'):
            apply_aug(x, AugOpKind.GAUSSIAN_NOISE, 0.1)

    def test_noise_is_seeded_and_clamped(self, rng):
        x = Tensor(rng.uniform(size=(2, 3, 6, 6)))
        first = apply_aug(x, AugOpKind.GAUSSIAN_NOISE, 0.2, rng=np.random.default_rng(3)).data
        second = apply_aug(x, AugOpKind.GAUSSIAN_NOISE, 0.2, rng=np.random.default_rng(3)).data
        np.testing.assert_array_equal(first, second)
        assert not np.allclose(first, x.data)
        assert first.min() >= 0.0 and first.max() <= 1.0
