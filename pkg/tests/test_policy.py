import math
from collections import Counter

import numpy as np
import pytest
from pydantic import ValidationError

from dimaug.augment.ops import apply_aug
from dimaug.augment.policy import (
    PolicyParams,
    apply_deployed,
    blend_weights,
    finalize_policy,
    load_policy,
    map_magnitudes,
    parse_policy,
    policy_forward_search,
    policy_to_json,
    sample_ops,
    save_policy,
    subpolicy_forward,
)
from dimaug.augment.presets import excessive_policy, identity_policy, manual_policy, random_policy, simclr_policy
from dimaug.exceptions import AugmentationError, PolicyFormatError
from dimaug.models import (
    MAGNITUDE_SPECS,
    NUM_OPS,
    OP_ORDER,
    AugOpKind,
    DeployedPolicy,
    PolicyOp,
    SamplingMode,
    SubPolicy,
)
from dimaug.tensor import ops
from dimaug.tensor.core import Tensor, backward
from dimaug.tensor.gradcheck import check_gradients


def _op(kind, prob, magnitude=None, high=None) -> PolicyOp:
    return PolicyOp(kind=AugOpKind(kind), prob=prob, magnitude=magnitude, magnitude_high=high)


def svhm_policy() -> DeployedPolicy:
    """Searched policy on a surgical video corpus, five sub-policies."""
    return DeployedPolicy(
        subpolicies=[
            SubPolicy(ops=[_op('Identical', 0.89), _op('Posterize', 0.08, 0.96), _op('GaussianBlur', 0.02, 0.22, 0.28)]),
            SubPolicy(ops=[_op('Saturation', 0.66, 1.07), _op('Sharpness', 0.2, 0.06), _op('Posterize', 0.1, 0.99)]),
            SubPolicy(ops=[_op('Identical', 0.93), _op('Posterize', 0.07, 1.0)]),
            SubPolicy(ops=[_op('Identical', 0.99)]),
            SubPolicy(ops=[_op('GaussianBlur', 1.0, 0.17, 0.98)]),
        ]
    )


def cholec_policy() -> DeployedPolicy:
    return DeployedPolicy(
        subpolicies=[
            SubPolicy(ops=[_op('Identical', 0.54), _op('GaussianBlur', 0.34, 0.16, 0.53), _op('Posterize', 0.08, 1.0)]),
            SubPolicy(ops=[_op('Saturation', 0.9, 1.12), _op('GaussianBlur', 0.05, 0.14, 0.17), _op('Hue', 0.04, -1.32)]),
            SubPolicy(ops=[_op('Identical', 1.0)]),
            SubPolicy(ops=[_op('Identical', 1.0)]),
            SubPolicy(ops=[_op('GaussianBlur', 1.0, 0.17, 0.79)]),
        ]
    )


def _one_hot_logits(kinds, strength=1000.0) -> np.ndarray:
    logits = np.zeros((len(kinds), NUM_OPS))
    for n, kind in enumerate(kinds):
        logits[n, kind.index] = strength
    return logits


class TestBlendWeights:
    def test_equal_logits_are_uniform(self):
        weights = blend_weights(Tensor(np.zeros(NUM_OPS)), 0.1)
        np.testing.assert_allclose(weights.data, 0.1, rtol=1e-6)

    @pytest.mark.parametrize('temperature', [0.05, 0.1, 1.0, 7.5])
    def test_weights_sum_to_one(self, rng, temperature):
        logits = Tensor(rng.normal(scale=3.0, size=(4, NUM_OPS)))
        weights = blend_weights(logits, temperature)
        np.testing.assert_allclose(weights.data.sum(axis=-1), 1.0, atol=1e-6)

    def test_excluded_ops_get_zero_weight(self, rng):
        excluded = [AugOpKind.HUE, AugOpKind.SOLARIZE]
        weights = blend_weights(Tensor(rng.normal(size=NUM_OPS)), 0.1, excluded).data
        assert weights[AugOpKind.HUE.index] == 0.0
        assert weights[AugOpKind.SOLARIZE.index] == 0.0
        assert weights.sum() == pytest.approx(1.0, abs=1e-6)

    def test_non_positive_temperature(self):
        with pytest.raises(AugmentationError, match='temperature'):
            blend_weights(Tensor(np.zeros(NUM_OPS)), 0.0)


class TestMagnitudeMapping:
    def test_zero_raw_maps_to_midpoints(self):
        mapped = map_magnitudes(Tensor(np.zeros((1, NUM_OPS)), dtype=np.float64)).data[0]
        for kind in OP_ORDER:
            spec = MAGNITUDE_SPECS[kind]
            if kind == AugOpKind.GAUSSIAN_BLUR:
                assert mapped[kind.index] == pytest.approx(2 * math.log(2))
            elif spec.parameter_count == 0:
                assert mapped[kind.index] == 0.0
            else:
                assert mapped[kind.index] == pytest.approx((spec.low + spec.high) / 2)

    def test_extreme_raw_stays_in_range(self):
        raw = Tensor(np.array([[-50.0] * NUM_OPS, [50.0] * NUM_OPS]), dtype=np.float64)
        mapped = map_magnitudes(raw).data
        for n in range(2):
            for kind in OP_ORDER:
                assert MAGNITUDE_SPECS[kind].contains(mapped[n, kind.index])


class TestSearchForward:
    def test_identical_dominant_is_near_identity(self, random_images):
        params = PolicyParams(n_subpolicies=3, logits=_one_hot_logits([AugOpKind.IDENTICAL] * 3, strength=10.0))
        out = policy_forward_search(Tensor(random_images), params)
        np.testing.assert_allclose(out.data, random_images.astype(np.float32), atol=3e-3)

    def test_single_subpolicy_equals_subpolicy_forward(self, random_images, rng):
        params = PolicyParams(n_subpolicies=1, logits=rng.normal(size=(1, NUM_OPS)))
        x = Tensor(random_images)
        expected = subpolicy_forward(x, params.logits[0], params.magnitudes()[0], params.temperature)
        np.testing.assert_array_equal(policy_forward_search(x, params).data, expected.data)

    def test_two_step_composition(self, random_images):
        raw = np.zeros((2, NUM_OPS))
        raw[0, AugOpKind.BRIGHTNESS.index] = -1.0
        raw[1, AugOpKind.CONTRAST.index] = 0.5
        params = PolicyParams(
            n_subpolicies=2,
            logits=_one_hot_logits([AugOpKind.BRIGHTNESS, AugOpKind.CONTRAST]),
            raw_magnitudes=raw,
        )
        magnitudes = params.magnitudes().data
        x = Tensor(random_images)
        manual = apply_aug(
            apply_aug(x, AugOpKind.BRIGHTNESS, float(magnitudes[0, AugOpKind.BRIGHTNESS.index])),
            AugOpKind.CONTRAST,
            float(magnitudes[1, AugOpKind.CONTRAST.index]),
        )
        np.testing.assert_allclose(policy_forward_search(x, params).data, manual.data, atol=1e-6)

    def test_logit_gradient_matches_finite_differences(self, float64, rng):
        x = Tensor(rng.uniform(0.2, 0.8, size=(1, 3, 8, 8)))
        logits = Tensor(rng.normal(scale=0.1, size=NUM_OPS), requires_grad=True)
        magnitudes = map_magnitudes(Tensor(np.zeros(NUM_OPS)))

        def fn():
            return ops.mean(subpolicy_forward(x, logits, magnitudes, 0.1))

        assert check_gradients(fn, [logits]) < 1e-3

    def test_gradients_are_finite_for_every_parameter(self, random_images):
        params = PolicyParams(n_subpolicies=2)
        out = policy_forward_search(Tensor(random_images), params)
        grads = backward(ops.mean(out), params.parameters())
        for param in params.parameters():
            assert np.isfinite(grads[param]).all()
        assert np.abs(grads[params.logits]).sum() > 0
        assert np.abs(grads[params.raw_magnitudes]).sum() > 0

    def test_output_stays_in_unit_range(self, random_images, rng):
        params = PolicyParams(
            n_subpolicies=3, logits=rng.normal(size=(3, NUM_OPS)), raw_magnitudes=rng.normal(scale=3, size=(3, NUM_OPS))
        )
        out = policy_forward_search(Tensor(random_images), params).data
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_nan_logits_name_the_subpolicy(self, random_images):
        logits = np.zeros((2, NUM_OPS))
        logits[1, 3] = np.nan
        params = PolicyParams(n_subpolicies=2, logits=logits)
        with pytest.raises(AugmentationError, match='Sub-policy 1'):
            policy_forward_search(Tensor(random_images), params)

    def test_wrong_parameter_shape(self):
        with pytest.raises(AugmentationError, match='shape'):
            PolicyParams(n_subpolicies=2, logits=np.zeros((3, NUM_OPS)))


class TestFinalize:
    def test_categorical_keeps_distribution(self):
        probs = np.full(NUM_OPS, 0.01 / 7)
        probs[AugOpKind.IDENTICAL.index] = 0.89
        probs[AugOpKind.POSTERIZE.index] = 0.08
        probs[AugOpKind.GAUSSIAN_BLUR.index] = 0.02
        params = PolicyParams(n_subpolicies=1, temperature=1.0, logits=np.log(probs).reshape(1, -1))
        policy = finalize_policy(params, 'categorical')
        found = {op.kind: op.prob for op in policy.subpolicies[0].ops}
        assert found[AugOpKind.IDENTICAL] == pytest.approx(0.89, abs=1e-6)
        assert found[AugOpKind.POSTERIZE] == pytest.approx(0.08, abs=1e-6)
        assert found[AugOpKind.GAUSSIAN_BLUR] == pytest.approx(0.02, abs=1e-6)
        assert len(found) == NUM_OPS

    def test_argmax_tie_goes_to_lowest_index(self):
        policy = finalize_policy(PolicyParams(n_subpolicies=2), SamplingMode.ARGMAX)
        for sub in policy.subpolicies:
            assert [(op.kind, op.prob) for op in sub.ops] == [(AugOpKind.IDENTICAL, 1.0)]

    def test_magnitudes_are_mapped(self):
        policy = finalize_policy(PolicyParams(n_subpolicies=1))
        by_kind = {op.kind: op for op in policy.subpolicies[0].ops}
        assert by_kind[AugOpKind.SATURATION].magnitude == pytest.approx(1.0)
        assert by_kind[AugOpKind.GRAY].magnitude is None

    def test_excluded_ops_are_dropped(self):
        params = PolicyParams(n_subpolicies=1, excluded_ops=[AugOpKind.HUE])
        kinds = {op.kind for op in finalize_policy(params).subpolicies[0].ops}
        assert AugOpKind.HUE not in kinds
        assert len(kinds) == NUM_OPS - 1

    def test_round_trip(self, rng):
        params = PolicyParams(n_subpolicies=3, logits=rng.normal(size=(3, NUM_OPS)))
        policy = finalize_policy(params)
        assert parse_policy(policy_to_json(policy)) == policy

    def test_state_round_trip(self, rng):
        params = PolicyParams(n_subpolicies=2, excluded_ops=[AugOpKind.GRAY], logits=rng.normal(size=(2, NUM_OPS)))
        restored = PolicyParams.from_state(params.state_dict(), params.metadata())
        np.testing.assert_array_equal(restored.logits.data, params.logits.data)
        assert restored.excluded_ops == [AugOpKind.GRAY]


class TestDeployedSampling:
    def test_identity_policy_leaves_images(self, random_images, rng):
        out = apply_deployed(random_images, identity_policy(), rng)
        np.testing.assert_array_equal(out.data, random_images.astype(np.float32))

    def test_seeded_application_is_reproducible(self, random_images):
        policy = simclr_policy()
        first = apply_deployed(random_images, policy, np.random.default_rng(5)).data
        second = apply_deployed(random_images, policy, np.random.default_rng(5)).data
        np.testing.assert_array_equal(first, second)

    def test_op_frequencies_match_probabilities(self):
        policy = svhm_policy()
        draws = sample_ops(policy, 10_000, np.random.default_rng(0))[0]
        counts = Counter(op.kind if op is not None else None for op in draws)
        for op in policy.subpolicies[0].ops:
            assert counts[op.kind] / 10_000 == pytest.approx(op.prob, abs=0.02)
        assert counts[None] / 10_000 == pytest.approx(0.01, abs=0.02)

    def test_argmax_mode_takes_best_op(self):
        policy = svhm_policy().model_copy(update={'mode': SamplingMode.ARGMAX})
        draws = sample_ops(policy, 50, np.random.default_rng(0))
        assert {op.kind for op in draws[1]} == {AugOpKind.SATURATION}

    def test_interval_magnitudes_are_sampled_per_image(self):
        policy = DeployedPolicy(subpolicies=[SubPolicy(ops=[_op('Brightness', 1.0, 0.2, 0.4)])])
        black = np.zeros((16, 3, 2, 2))
        out = apply_deployed(black, policy, np.random.default_rng(3)).data
        levels = out[:, 0, 0, 0]
        assert levels.min() >= 0.2 - 1e-6 and levels.max() <= 0.4 + 1e-6
        assert len(np.unique(levels)) > 1

    def test_excessive_policy_leaves_one_random_bit(self, rng):
        images = rng.uniform(0.0, 1.0, size=(64, 3, 8, 8))
        out = apply_deployed(images, excessive_policy(), np.random.default_rng(5)).data
        dark, mid = np.isclose(out, 0.0), np.isclose(out, 128 / 255)
        assert (dark | mid).all()
        flat = out.reshape(64, -1).max(axis=1) == out.reshape(64, -1).min(axis=1)
        assert flat.mean() >= 0.8
        levels = out.reshape(64, -1)[flat, 0]
        assert np.isclose(levels, 0.0).any() and np.isclose(levels, 128 / 255).any()

    def test_manual_policy_keeps_content(self, rng):
        images = rng.uniform(0.2, 0.8, size=(32, 3, 8, 8))
        out = apply_deployed(images, manual_policy(), np.random.default_rng(1)).data
        assert out.shape == images.shape
        assert out.min() >= 0.0 and out.max() <= 1.0
        assert not np.allclose(out, images)
        assert len(np.unique(out.reshape(32, -1).std(axis=1).round(6))) > 1


class TestPresets:
    def test_random_policy_is_seeded(self):
        assert random_policy(seed=4) == random_policy(seed=4)

    def test_random_policy_magnitudes_in_range(self):
        for seed in range(20):
            for sub in random_policy(seed=seed, n_subpolicies=5).subpolicies:
                (op,) = sub.ops
                assert op.prob == 1.0
                if op.magnitude is not None:
                    assert MAGNITUDE_SPECS[op.kind].contains(op.magnitude)

    def test_simclr_policy_slots(self):
        policy = simclr_policy()
        assert [sub.ops[0].kind.value for sub in policy.subpolicies] == [
            'Brightness', 'Contrast', 'Saturation', 'Hue', 'Gray', 'GaussianBlur'
        ]
        assert policy.subpolicies[4].residual == pytest.approx(0.8)

    def test_manual_policy_slots(self):
        policy = manual_policy()
        assert [sub.ops[0].kind.value for sub in policy.subpolicies] == [
            'Rotate', 'Contrast', 'GaussianNoise', 'GaussianBlur'
        ]
        assert all(sub.ops[0].prob == 0.8 for sub in policy.subpolicies)
        assert policy.subpolicies[0].ops[0].magnitude_high == 30.0


class TestPolicyDocuments:
    @pytest.mark.parametrize('fixture', [svhm_policy, cholec_policy])
    def test_searched_policies_round_trip(self, fixture, tmp_path):
        policy = fixture()
        text = policy_to_json(policy)
        assert parse_policy(text) == policy
        assert policy_to_json(parse_policy(text)) == text
        path = save_policy(policy, tmp_path / 'p' / 'policy.json')
        assert load_policy(path) == policy

    def test_key_order_is_stable(self):
        text = policy_to_json(identity_policy(1))
        assert text.index('"version"') < text.index('"mode"') < text.index('"subpolicies"')

    def test_provenance_survives(self):
        policy = identity_policy(1).model_copy(update={'provenance': {'config_hash': 'abc', 'seed': 3}})
        assert parse_policy(policy_to_json(policy)).provenance == {'config_hash': 'abc', 'seed': 3}

    @pytest.mark.parametrize(
        'text',
        [
            'not json',
            '{"version": 2, "subpolicies": [{"ops": [{"kind": "Identical", "prob": 1.0}]}]}',
            '{"version": 1, "subpolicies": [{"ops": [{"kind": "Warp", "prob": 1.0}]}]}',
            '{"version": 1, "subpolicies": [{"ops": [{"kind": "Brightness", "prob": 0.7, "magnitude": 0.1},'
            ' {"kind": "Contrast", "prob": 0.7, "magnitude": 0.1}]}]}',
        ],
    )
    def test_invalid_documents(self, text):
        with pytest.raises(PolicyFormatError):
            parse_policy(text)

    def test_missing_file(self, tmp_path):
        with pytest.raises(PolicyFormatError, match='not found'):
            load_policy(tmp_path / 'absent.json')

    def test_op_validation(self):
        with pytest.raises(ValidationError, match='takes no magnitude'):
            _op('Gray', 0.5, 0.3)
        with pytest.raises(ValidationError, match='requires a magnitude'):
            _op('Brightness', 0.5)
        with pytest.raises(ValidationError, match='reversed'):
            _op('Brightness', 0.5, 0.6, 0.2)
        with pytest.raises(ValidationError, match='outside'):
            _op('Posterize', 0.5, 9.0)
