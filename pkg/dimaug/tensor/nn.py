"""Layer modules built on the tensor ops.

Modules own parameter tensors and buffers (running statistics). Sub-modules are discovered from
attributes, so ``named_parameters`` yields stable dotted names used by checkpoints.
"""

from typing import Dict, Iterator, List, Sequence, Tuple

import numpy as np

from dimaug.exceptions import CheckpointError
from dimaug.tensor import ops
from dimaug.tensor.core import Tensor, get_default_dtype


class Module:
    """Base class for layers with parameters, buffers and a train/eval switch."""

    def __init__(self) -> None:
        """Start in training mode with no buffers."""
        self.training = True
        self._buffers: Dict[str, np.ndarray] = {}

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def children(self) -> Iterator[Tuple[str, 'Module']]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f'{name}.{i}', item

    def named_parameters(self, prefix: str = '') -> Iterator[Tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor):
                yield f'{prefix}{name}', value
        for name, child in self.children():
            yield from child.named_parameters(f'{prefix}{name}.')

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = '') -> Iterator[Tuple[str, np.ndarray]]:
        for name, value in self._buffers.items():
            yield f'{prefix}{name}', value
        for name, child in self.children():
            yield from child.named_buffers(f'{prefix}{name}.')

    def train(self, mode: bool = True) -> 'Module':
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self) -> 'Module':
        return self.train(False)

    def freeze(self) -> 'Module':
        """Switch to eval mode and stop gradients to every parameter."""
        for param in self.parameters():
            param.requires_grad = False
        return self.eval()

    def unfreeze(self) -> 'Module':
        for param in self.parameters():
            param.requires_grad = True
        return self

    def state_dict(self) -> Dict[str, np.ndarray]:
        """Copy every parameter and buffer array, keyed by dotted name."""
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: b.copy() for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        """Restore arrays saved by ``state_dict``.

        Raises:
            CheckpointError: If names or shapes do not match this module.
        """
        params = dict(self.named_parameters())
        expected = set(params) | {name for name, _ in self.named_buffers()}
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise CheckpointError(f'State mismatch: missing {missing}, unexpected {extra}')
        for name, param in params.items():
            if state[name].shape != param.shape:
                raise CheckpointError(
                    f'Shape mismatch for {name}: checkpoint {state[name].shape}, module {param.shape}'
                )
            param.data = np.array(state[name], dtype=param.dtype)
        self._load_buffers(state, '')

    def _load_buffers(self, state: Dict[str, np.ndarray], prefix: str) -> None:
        for name in self._buffers:
            self._buffers[name] = np.array(state[f'{prefix}{name}'])
        for name, child in self.children():
            child._load_buffers(state, f'{prefix}{name}.')


def _he_normal(rng: np.random.Generator, shape: Sequence[int], fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=tuple(shape))


class Linear(Module):
    """Affine map ``x @ W + b``."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        """Initialize with He-normal weights and zero bias."""
        super().__init__()
        self.weight = Tensor(_he_normal(rng, (in_features, out_features), in_features), requires_grad=True)
        self.bias = Tensor(np.zeros(out_features), requires_grad=True) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        out = ops.matmul(x, self.weight)
        return out if self.bias is None else ops.add(out, self.bias)


class Conv2d(Module):
    """Square-kernel convolution over NCHW input."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        padding: int = 0,
        stride: int = 1,
        bias: bool = False,
    ):
        """Initialize with He-normal weights."""
        super().__init__()
        fan_in = in_channels * kernel_size * kernel_size
        shape = (out_channels, in_channels, kernel_size, kernel_size)
        self.weight = Tensor(_he_normal(rng, shape, fan_in), requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True) if bias else None
        self.padding = padding
        self.stride = stride

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class BatchNorm2d(Module):
    """Batch normalization over (N, H, W) per channel with running statistics."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        """Initialize unit scale, zero shift and identity running statistics."""
        super().__init__()
        self.gamma = Tensor(np.ones((1, channels, 1, 1)), requires_grad=True)
        self.beta = Tensor(np.zeros((1, channels, 1, 1)), requires_grad=True)
        self.momentum = momentum
        self.eps = eps
        self._buffers['running_mean'] = np.zeros((1, channels, 1, 1), dtype=get_default_dtype())
        self._buffers['running_var'] = np.ones((1, channels, 1, 1), dtype=get_default_dtype())

    def forward(self, x: Tensor) -> Tensor:
        if self.training:
            mean = ops.mean(x, axis=(0, 2, 3), keepdims=True)
            centered = ops.sub(x, mean)
            var = ops.mean(ops.mul(centered, centered), axis=(0, 2, 3), keepdims=True)
            count = x.shape[0] * x.shape[2] * x.shape[3]
            unbiased = var.data * count / max(count - 1, 1)
            m = self.momentum
            self._buffers['running_mean'] = ((1 - m) * self._buffers['running_mean'] + m * mean.data).astype(x.dtype)
            self._buffers['running_var'] = ((1 - m) * self._buffers['running_var'] + m * unbiased).astype(x.dtype)
        else:
            centered = ops.sub(x, Tensor(self._buffers['running_mean'], dtype=x.dtype))
            var = Tensor(self._buffers['running_var'], dtype=x.dtype)
        normed = ops.div(centered, ops.sqrt(ops.add(var, self.eps)))
        return ops.add(ops.mul(normed, self.gamma), self.beta)


class ConvBlock(Module):
    """conv3x3 -> batch-norm -> ReLU -> 2x average pool."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator):
        """Build the block's conv and batch-norm layers."""
        super().__init__()
        self.conv = Conv2d(in_channels, out_channels, 3, rng, padding=1)
        self.bn = BatchNorm2d(out_channels)

    def forward(self, x: Tensor) -> Tensor:
        return ops.avg_pool2d(ops.relu(self.bn(self.conv(x))), 2)


class MLP(Module):
    """Two-layer perceptron with a ReLU between the layers."""

    def __init__(self, dims: Sequence[int], rng: np.random.Generator):
        """Build linear layers for consecutive pairs in ``dims``."""
        super().__init__()
        self.layers = [Linear(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]

    def forward(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = ops.relu(x)
        return x


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the spatial axes of an NCHW tensor."""
    return ops.mean(x, axis=(2, 3))