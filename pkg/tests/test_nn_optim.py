import numpy as np
import pytest

from dimaug.exceptions import CheckpointError
from dimaug.tensor import ops
from dimaug.tensor.core import Tensor, backward
from dimaug.tensor.gradcheck import check_gradients
from dimaug.tensor.nn import MLP, BatchNorm2d, ConvBlock, Linear
from dimaug.tensor.optim import SGD, Adam, build_optimizer


def _quadratic(param: Tensor) -> Tensor:
    return ops.sum(ops.mul(param, param))


class TestOptimizers:
    @pytest.mark.parametrize('kind', ['adam', 'sgd'])
    def test_zero_learning_rate_is_bit_identical(self, kind, rng):
        param = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
        before = param.data.copy()
        optimizer = build_optimizer(kind, [param], lr=0.0, weight_decay=0.1)
        for _ in range(3):
            optimizer.step(backward(_quadratic(param)))
        np.testing.assert_array_equal(param.data, before)
        assert optimizer.step_count == 3

    def test_sgd_step_matches_formula(self):
        param = Tensor([1.0, -2.0], requires_grad=True)
        SGD([param], lr=0.1).step(backward(_quadratic(param)))
        np.testing.assert_allclose(param.data, [1.0 - 0.1 * 2.0, -2.0 + 0.1 * 4.0], rtol=1e-6)

    def test_first_adam_step_is_lr_times_sign(self):
        param = Tensor([1.0, -2.0], requires_grad=True)
        Adam([param], lr=0.01).step(backward(_quadratic(param)))
        np.testing.assert_allclose(param.data, [0.99, -1.99], rtol=1e-5)

    def test_optimizer_replaces_arrays(self, rng):
        param = Tensor(rng.normal(size=4), requires_grad=True)
        captured = param.data
        SGD([param], lr=0.5).step(backward(_quadratic(param)))
        assert param.data is not captured

    def test_frozen_parameters_are_skipped(self):
        frozen = Tensor([1.0], requires_grad=False)
        optimizer = SGD([frozen], lr=0.1)
        assert optimizer.params == []

    def test_minimizes_quadratic(self, rng):
        param = Tensor(rng.normal(size=5), requires_grad=True)
        optimizer = Adam([param], lr=0.1)
        for _ in range(200):
            optimizer.step(backward(_quadratic(param)))
        assert np.abs(param.data).max() < 0.05

    def test_negative_learning_rate(self):
        with pytest.raises(ValueError):
            SGD([Tensor([1.0], requires_grad=True)], lr=-1.0)

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match='Unknown optimizer'):
            build_optimizer('lars', [], lr=0.1)


class TestModules:
    def test_linear_shapes_and_gradients(self, float64, rng):
        layer = Linear(4, 3, rng)
        x = Tensor(rng.normal(size=(5, 4)))
        assert layer(x).shape == (5, 3)
        assert check_gradients(lambda: ops.sum(ops.relu(layer(x))), layer.parameters()) < 1e-5

    def test_named_parameters_are_stable(self, rng):
        mlp = MLP([4, 8, 2], rng)
        names = [name for name, _ in mlp.named_parameters()]
        assert names == ['layers.0.weight', 'layers.0.bias', 'layers.1.weight', 'layers.1.bias']

    def test_state_dict_round_trip(self, rng):
        block = ConvBlock(3, 4, rng)
        block(Tensor(rng.uniform(size=(2, 3, 4, 4))))
        state = block.state_dict()
        other = ConvBlock(3, 4, np.random.default_rng(99))
        other.load_state_dict(state)
        for name, value in other.state_dict().items():
            np.testing.assert_array_equal(value, state[name])

    def test_state_dict_mismatch(self, rng):
        with pytest.raises(CheckpointError, match='missing'):
            MLP([4, 8, 2], rng).load_state_dict({'layers.0.weight': np.zeros((4, 8))})

    def test_state_dict_shape_mismatch(self, rng):
        state = Linear(4, 3, rng).state_dict()
        with pytest.raises(CheckpointError, match='Shape mismatch'):
            Linear(4, 2, rng).load_state_dict(state)

    def test_batchnorm_train_normalizes(self, rng):
        bn = BatchNorm2d(2)
        x = Tensor(rng.normal(3.0, 2.0, size=(8, 2, 4, 4)))
        out = bn(x).data
        np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-4)
        np.testing.assert_allclose(out.std(axis=(0, 2, 3)), 1.0, atol=1e-2)

    def test_batchnorm_eval_uses_running_stats(self, rng):
        bn = BatchNorm2d(2)
        x = Tensor(rng.normal(size=(4, 2, 3, 3)))
        bn.eval()
        first = bn(x).data
        np.testing.assert_array_equal(bn(x).data, first)
        np.testing.assert_allclose(first, x.data / np.sqrt(1 + 1e-5), rtol=1e-5)

    def test_freeze_and_unfreeze(self, rng):
        mlp = MLP([2, 3, 1], rng)
        mlp.freeze()
        assert not mlp.training
        assert not any(p.requires_grad for p in mlp.parameters())
        mlp.unfreeze()
        assert all(p.requires_grad for p in mlp.parameters())
