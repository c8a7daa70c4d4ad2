"""Gradient-map optimizers.

Optimizers hold references to parameter tensors and replace their ``data`` arrays in place of
mutating them, so arrays captured by an earlier tape are never changed under it.
"""

from typing import Dict, List, Optional, Sequence

import numpy as np

from dimaug.tensor.core import Gradients, Tensor


class Optimizer:
    """Base class for optimizers over a fixed parameter list."""

    def __init__(self, params: Sequence[Tensor], lr: float, weight_decay: float = 0.0):
        """Initialize with the trainable tensors.

        Args:
            params: Tensors to update; those with ``requires_grad=False`` are skipped.
            lr: Step size (0 leaves parameters bit-identical).
            weight_decay: L2 coefficient added to each gradient.
        """
        if lr < 0:
            raise ValueError(f'Learning rate must be non-negative, got {lr}')
        self.params: List[Tensor] = [p for p in params if p.requires_grad]
        self.lr = float(lr)
        self.weight_decay = float(weight_decay)
        self.step_count = 0

    def _grad(self, param: Tensor, grads: Gradients) -> Optional[np.ndarray]:
        grad = grads.get(param)
        if grad is None:
            return None
        if self.weight_decay:
            grad = grad + self.weight_decay * param.data
        return grad

    def step(self, grads: Gradients) -> None:
        raise NotImplementedError

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {'step_count': np.array(self.step_count)}


class SGD(Optimizer):
    """Stochastic gradient descent with optional momentum."""

    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float,
        momentum: float = 0.0,
        weight_decay: float = 0.0,
    ):
        """Initialize SGD; ``momentum`` 0 gives plain gradient descent."""
        super().__init__(params, lr, weight_decay)
        self.momentum = float(momentum)
        self._velocity: Dict[int, np.ndarray] = {}

    def step(self, grads: Gradients) -> None:
        """Apply one update from a gradient map."""
        self.step_count += 1
        if self.lr == 0:
            return
        for param in self.params:
            grad = self._grad(param, grads)
            if grad is None:
                continue
            if self.momentum:
                velocity = self._velocity.get(id(param))
                velocity = grad if velocity is None else self.momentum * velocity + grad
                self._velocity[id(param)] = velocity
                grad = velocity
            param.data = (param.data - self.lr * grad).astype(param.dtype)


class Adam(Optimizer):
    """Adam with bias correction and optional L2 weight decay."""

    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float = 1e-3,
        betas: Sequence[float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        """Initialize Adam moment buffers lazily per parameter."""
        super().__init__(params, lr, weight_decay)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self._m: Dict[int, np.ndarray] = {}
        self._v: Dict[int, np.ndarray] = {}

    def step(self, grads: Gradients) -> None:
        """Apply one Adam update from a gradient map."""
        self.step_count += 1
        if self.lr == 0:
            return
        t = self.step_count
        for param in self.params:
            grad = self._grad(param, grads)
            if grad is None:
                continue
            key = id(param)
            m = self.beta1 * self._m.get(key, 0.0) + (1 - self.beta1) * grad
            v = self.beta2 * self._v.get(key, 0.0) + (1 - self.beta2) * grad * grad
            self._m[key], self._v[key] = m, v
            m_hat = m / (1 - self.beta1**t)
            v_hat = v / (1 - self.beta2**t)
            update = self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            param.data = (param.data - update).astype(param.dtype)


def build_optimizer(
    kind: str,
    params: Sequence[Tensor],
    lr: float,
    weight_decay: float = 0.0,
    momentum: float = 0.9,
) -> Optimizer:
    """Create an optimizer by name ('adam' or 'sgd')."""
    if kind == 'adam':
        return Adam(params, lr=lr, weight_decay=weight_decay)
    if kind == 'sgd':
        return SGD(params, lr=lr, momentum=momentum, weight_decay=weight_decay)
    raise ValueError(f'Unknown optimizer kind {kind!r}')
