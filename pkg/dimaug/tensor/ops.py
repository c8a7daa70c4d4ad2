"""Differentiable op inventory.

Each op computes its forward value with numpy and records a backward closure through
``dimaug.tensor.core.record``. Broadcasting follows numpy; gradients are summed back to the
input shapes.
"""

from __future__ import annotations

import builtins
from typing import Any, Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np

from dimaug.exceptions import DomainError, TensorShapeError
from dimaug.tensor.core import (
    Tensor,
    epsilon_for,
    is_grad_enabled,
    no_grad,
    numerics_mode,
    record,
)


Operand = Union[Tensor, float, int, np.ndarray]
Padding = Union[int, Tuple[int, int, int, int]]


def as_tensor(value: Operand, like: Optional[Tensor] = None) -> Tensor:
    """Return ``value`` as a Tensor, matching ``like``'s dtype for constants."""
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(value, dtype=dtype)


def _pair(a: Operand, b: Operand) -> Tuple[Tensor, Tensor]:
    like = a if isinstance(a, Tensor) else b if isinstance(b, Tensor) else None
    return as_tensor(a, like), as_tensor(b, like)


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(kind: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise TensorShapeError(f'{kind}: cannot broadcast shapes {a.shape} and {b.shape}') from None


# Elementwise arithmetic


def add(a: Operand, b: Operand) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast('add', a, b)
    return record(
        'add',
        a.data + b.data,
        (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)),
    )


def sub(a: Operand, b: Operand) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast('sub', a, b)
    return record(
        'sub',
        a.data - b.data,
        (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)),
    )


def mul(a: Operand, b: Operand) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast('mul', a, b)
    return record(
        'mul',
        a.data * b.data,
        (a, b),
        lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)),
    )


def _guard_nonzero(kind: str, values: np.ndarray) -> np.ndarray:
    eps = epsilon_for(values.dtype)
    small = np.abs(values) < eps
    if not small.any():
        return values
    if numerics_mode() == 'strict':
        raise DomainError(f'{kind}: {int(small.sum())} value(s) with magnitude below {eps}')
    sign = np.where(values < 0, -1.0, 1.0).astype(values.dtype)
    return np.where(small, sign * eps, values).astype(values.dtype)


def div(a: Operand, b: Operand) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast('div', a, b)
    denom = _guard_nonzero('div', b.data)
    out = a.data / denom

    def backward(g: np.ndarray):
        return (
            unbroadcast(g / denom, a.shape),
            unbroadcast(-g * out / denom, b.shape),
        )

    return record('div', out, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return record('neg', -a.data, (a,), lambda g: (-g,))


def pow(a: Tensor, exponent: float) -> Tensor:
    """Raise to a constant scalar power."""
    exponent = float(exponent)
    if not float(exponent).is_integer() and (a.data < 0).any():
        if numerics_mode() == 'strict':
            raise DomainError(f'pow: negative base with fractional exponent {exponent}')
    out = np.power(a.data, exponent).astype(a.dtype)
    return record(
        'pow',
        out,
        (a,),
        lambda g: (g * exponent * np.power(a.data, exponent - 1).astype(a.dtype),),
    )


def sqrt(a: Tensor) -> Tensor:
    """Square root; the gradient is zero where the value is below epsilon."""
    if (a.data < 0).any():
        if numerics_mode() == 'strict':
            raise DomainError(f'sqrt: {int((a.data < 0).sum())} negative value(s)')
    out = np.sqrt(np.maximum(a.data, 0)).astype(a.dtype)
    eps = epsilon_for(a.dtype)

    def backward(g: np.ndarray):
        safe = np.where(out > eps, out, 1).astype(a.dtype)
        return (np.where(out > eps, g / (2 * safe), 0).astype(a.dtype),)

    return record('sqrt', out, (a,), backward)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return record('exp', out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    eps = epsilon_for(a.dtype)
    low = a.data < eps
    if low.any():
        if numerics_mode() == 'strict':
            raise DomainError(f'log: {int(low.sum())} value(s) below {eps}')
    safe = np.maximum(a.data, eps).astype(a.dtype)
    return record('log', np.log(safe), (a,), lambda g: (np.where(low, 0, g / safe).astype(a.dtype),))


def sigmoid(a: Tensor) -> Tensor:
    out = (0.5 * (1 + np.tanh(0.5 * a.data))).astype(a.dtype)
    return record('sigmoid', out, (a,), lambda g: (g * out * (1 - out),))


def softplus(a: Tensor) -> Tensor:
    out = (np.log1p(np.exp(-np.abs(a.data))) + np.maximum(a.data, 0)).astype(a.dtype)
    slope = (0.5 * (1 + np.tanh(0.5 * a.data))).astype(a.dtype)
    return record('softplus', out, (a,), lambda g: (g * slope,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return record('relu', np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,))


def sin(a: Tensor) -> Tensor:
    return record('sin', np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


def cos(a: Tensor) -> Tensor:
    return record('cos', np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),))


def clamp(a: Tensor, low: Optional[float] = None, high: Optional[float] = None) -> Tensor:
    """Clip values; the gradient passes only where the input was inside the bounds."""
    lo = -np.inf if low is None else low
    hi = np.inf if high is None else high
    inside = (a.data >= lo) & (a.data <= hi)
    out = np.clip(a.data, lo, hi).astype(a.dtype)
    return record('clamp', out, (a,), lambda g: (g * inside,))


def where(condition: np.ndarray, a: Operand, b: Operand) -> Tensor:
    """Select from ``a`` where the constant boolean ``condition`` holds, else from ``b``."""
    a, b = _pair(a, b)
    cond = np.asarray(condition, dtype=bool)
    out = np.where(cond, a.data, b.data)

    def backward(g: np.ndarray):
        return (
            unbroadcast(np.where(cond, g, 0).astype(g.dtype), a.shape),
            unbroadcast(np.where(cond, 0, g).astype(g.dtype), b.shape),
        )

    return record('where', out, (a, b), backward)


def stop_gradient(a: Tensor) -> Tensor:
    """Return a constant copy; nothing downstream differentiates into ``a``."""
    return Tensor._wrap(a.data)


def straight_through(
    forward_fn: Callable[..., Tensor],
    surrogate_fn: Callable[..., Tensor],
    *inputs: Tensor,
) -> Tensor:
    """Take the value from ``forward_fn`` and the gradient from ``surrogate_fn``.

    Args:
        forward_fn: Possibly non-differentiable map, evaluated without recording.
        surrogate_fn: Smooth map with the same output shape, evaluated on the tape.
        *inputs: Tensors passed to both functions.

    Returns:
        Tensor: Exactly ``forward_fn(*inputs)`` in value.

    Raises:
        TensorShapeError: If the two functions disagree on output shape.
    """
    with no_grad():
        value = forward_fn(*[t.detach() for t in inputs])
    surrogate = surrogate_fn(*inputs)
    if value.shape != surrogate.shape:
        raise TensorShapeError(
            f'straight_through: forward shape {value.shape} != surrogate shape {surrogate.shape}'
        )
    data = value.data.astype(surrogate.dtype)
    return record('straight_through', data, (surrogate,), lambda g: (g,))


# Linear algebra


def matmul(a: Operand, b: Operand) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise TensorShapeError(f'matmul: incompatible shapes {a.shape} and {b.shape}')
    out = np.matmul(a.data, b.data)

    def backward(g: np.ndarray):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return record('matmul', out, (a, b), backward)


def _normalize_padding(padding: Padding) -> Tuple[int, int, int, int]:
    if isinstance(padding, int):
        return (padding, padding, padding, padding)
    if len(padding) != 4:
        raise TensorShapeError(f'conv2d: padding must be an int or (top, bottom, left, right), got {padding}')
    return tuple(int(p) for p in padding)  # type: ignore[return-value]


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: Padding = 0,
) -> Tensor:
    """Direct 2-D convolution on NCHW input with OIkk weights and explicit zero padding."""
    if x.ndim != 4 or weight.ndim != 4:
        raise TensorShapeError(f'conv2d: expected 4-D input and weight, got {x.shape} and {weight.shape}')
    n, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise TensorShapeError(f'conv2d: input channels {c} != weight channels {ci} ({x.shape} vs {weight.shape})')
    top, bottom, left, right = _normalize_padding(padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (top, bottom), (left, right)))
    hp, wp = xp.shape[2], xp.shape[3]
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    if oh <= 0 or ow <= 0:
        raise TensorShapeError(f'conv2d: kernel {weight.shape[2:]} larger than padded input {(hp, wp)}')

    def window(arr: np.ndarray, i: int, j: int) -> np.ndarray:
        return arr[:, :, i : i + stride * (oh - 1) + 1 : stride, j : j + stride * (ow - 1) + 1 : stride]

    out = np.zeros((n, o, oh, ow), dtype=np.result_type(x.dtype, weight.dtype))
    for i in range(kh):
        for j in range(kw):
            out += np.einsum('nchw,oc->nohw', window(xp, i, j), weight.data[:, :, i, j], optimize=True)
    inputs: Tuple[Tensor, ...] = (x, weight)
    if bias is not None:
        out += bias.data.reshape(1, o, 1, 1)
        inputs = (x, weight, bias)

    def backward(g: np.ndarray):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(weight.data)
        for i in range(kh):
            for j in range(kw):
                gw[:, :, i, j] = np.einsum('nohw,nchw->oc', g, window(xp, i, j), optimize=True)
                window(gxp, i, j)[...] += np.einsum('nohw,oc->nchw', g, weight.data[:, :, i, j], optimize=True)
        gx = gxp[:, :, top : top + h, left : left + w]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)).astype(bias.dtype))
        return grads

    return record('conv2d', out, inputs, backward, {'stride': stride, 'padding': (top, bottom, left, right)})


# Reductions and normalizations


def _axes(axis: Any, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(a: Tensor, axis: Any = None, keepdims: bool = False) -> Tensor:
    axes = _axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g: np.ndarray):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return record('sum', np.asarray(out, dtype=a.dtype), (a,), backward)


def mean(a: Tensor, axis: Any = None, keepdims: bool = False) -> Tensor:
    axes = _axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def backward(g: np.ndarray):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return ((np.broadcast_to(g, a.shape) / count).astype(a.dtype),)

    return record('mean', np.asarray(out, dtype=a.dtype), (a,), backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g: np.ndarray):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return record('softmax', out, (a,), backward)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    probs = np.exp(out)

    def backward(g: np.ndarray):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return record('log_softmax', out, (a,), backward)


def l2_normalize(a: Tensor, axis: int = -1) -> Tensor:
    """Divide by the L2 norm along ``axis`` (norm floored at epsilon)."""
    eps = epsilon_for(a.dtype)
    norm = np.maximum(np.sqrt((a.data**2).sum(axis=axis, keepdims=True)), eps)
    out = a.data / norm

    def backward(g: np.ndarray):
        return ((g - out * (g * out).sum(axis=axis, keepdims=True)) / norm,)

    return record('l2_normalize', out, (a,), backward)


def pairwise_sq_dist(a: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Squared Euclidean distances between rows of ``a`` (M×d) and ``b`` (N×d)."""
    other = a if b is None else b
    if a.ndim != 2 or other.ndim != 2 or a.shape[1] != other.shape[1]:
        raise TensorShapeError(f'pairwise_sq_dist: incompatible shapes {a.shape} and {other.shape}')
    diff = a.data[:, None, :] - other.data[None, :, :]
    out = (diff**2).sum(axis=-1)

    def backward(g: np.ndarray):
        weighted = 2 * g[:, :, None] * diff
        if b is None:
            return (weighted.sum(axis=1) - weighted.sum(axis=0),)
        return weighted.sum(axis=1), -weighted.sum(axis=0)

    inputs = (a,) if b is None else (a, b)
    return record('pairwise_sq_dist', out, inputs, backward)


# Shape and indexing


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError:
        raise TensorShapeError(f'reshape: cannot reshape {a.shape} into {tuple(shape)}') from None
    return record('reshape', out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return record('transpose', a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    shapes = [t.shape for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise TensorShapeError(f'concat: incompatible shapes {shapes} along axis {axis}') from None
    bounds = np.cumsum([0] + [s[axis] for s in shapes])

    def backward(g: np.ndarray):
        return [
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors))
        ]

    return record('concat', out, tuple(tensors), backward)


def getitem(a: Tensor, key: Any) -> Tensor:
    """Basic or advanced indexing; repeated indices accumulate gradient."""
    if isinstance(key, Tensor):
        key = key.data.astype(np.int64)
    out = np.array(a.data[key], dtype=a.dtype)

    def backward(g: np.ndarray):
        grad = np.zeros_like(a.data)
        np.add.at(grad, key, g)
        return (grad,)

    return record('getitem', out, (a,), backward)


def take_along_axis(a: Tensor, indices: np.ndarray, axis: int = -1) -> Tensor:
    """Gather with constant integer ``indices`` (frozen at forward time)."""
    indices = np.asarray(indices, dtype=np.int64)
    out = np.take_along_axis(a.data, indices, axis=axis)
    axis = axis % a.ndim

    def backward(g: np.ndarray):
        grad = np.zeros_like(a.data)
        index = list(np.ix_(*[np.arange(s) for s in indices.shape]))
        index[axis] = indices
        np.add.at(grad, tuple(index), g)
        return (grad,)

    return record('take_along_axis', out, (a,), backward)


def index_select(a: Tensor, indices: np.ndarray, axis: int = 0) -> Tensor:
    indices = np.asarray(indices, dtype=np.int64)
    out = np.take(a.data, indices, axis=axis)

    def backward(g: np.ndarray):
        grad = np.zeros_like(a.data)
        np.add.at(np.moveaxis(grad, axis, 0), indices, np.moveaxis(g, axis, 0))
        return (grad,)

    return record('index_select', out, (a,), backward)


def pad(a: Tensor, pad_width: Sequence[Tuple[int, int]], mode: str = 'constant') -> Tensor:
    """Pad with zeros ('constant'), edge copies ('replicate') or mirror copies ('reflect')."""
    if mode not in ('constant', 'replicate', 'reflect'):
        raise ValueError(f'pad: unknown mode {mode!r}')
    pad_width = [tuple(int(p) for p in pw) for pw in pad_width]
    if len(pad_width) != a.ndim:
        raise TensorShapeError(f'pad: {len(pad_width)} pad pairs for a {a.ndim}-D tensor')
    if mode == 'constant':
        out = np.pad(a.data, pad_width)
        inner = tuple(slice(lo, lo + s) for (lo, _), s in zip(pad_width, a.shape))
        return record('pad', out, (a,), lambda g: (g[inner],))

    np_mode = 'edge' if mode == 'replicate' else 'reflect'
    index_grids = [
        np.pad(np.arange(size), pw, mode=np_mode) for size, pw in zip(a.shape, pad_width)
    ]
    index = np.ix_(*index_grids)
    out = a.data[index]

    def backward(g: np.ndarray):
        grad = np.zeros_like(a.data)
        np.add.at(grad, index, g)
        return (grad,)

    return record('pad', out, (a,), backward)


def avg_pool2d(x: Tensor, kernel: int = 2) -> Tensor:
    """Non-overlapping average pooling on NCHW input (trailing rows/cols dropped)."""
    n, c, h, w = x.shape
    oh, ow = h // kernel, w // kernel
    if oh == 0 or ow == 0:
        raise TensorShapeError(f'avg_pool2d: kernel {kernel} larger than input {x.shape}')
    cropped = x if (oh * kernel, ow * kernel) == (h, w) else x[:, :, : oh * kernel, : ow * kernel]
    blocks = reshape(cropped, (n, c, oh, kernel, ow, kernel))
    return mean(blocks, axis=(3, 5))


_OP_REGISTRY: Dict[str, Callable[..., Tensor]] = {
    'add': add,
    'sub': sub,
    'mul': mul,
    'div': div,
    'neg': neg,
    'pow': pow,
    'sqrt': sqrt,
    'exp': exp,
    'log': log,
    'sigmoid': sigmoid,
    'softplus': softplus,
    'relu': relu,
    'sin': sin,
    'cos': cos,
    'clamp': clamp,
    'where': where,
    'matmul': matmul,
    'conv2d': conv2d,
    'sum': sum,
    'mean': mean,
    'softmax': softmax,
    'log_softmax': log_softmax,
    'l2_normalize': l2_normalize,
    'pairwise_sq_dist': pairwise_sq_dist,
    'reshape': reshape,
    'transpose': transpose,
    'concat': concat,
    'getitem': getitem,
    'gather': take_along_axis,
    'take_along_axis': take_along_axis,
    'index_select': index_select,
    'pad': pad,
    'avg_pool2d': avg_pool2d,
    'stop_gradient': stop_gradient,
    'straight_through': straight_through,
}


def forward_op(kind: str, inputs: Sequence[Any], attrs: Optional[Dict[str, Any]] = None) -> Tensor:
    """Dispatch an op by kind name.

    Args:
        kind: Registered op name (e.g. 'matmul', 'softmax').
        inputs: Positional inputs for the op.
        attrs: Keyword attributes (axis, padding, ...).

    Returns:
        Tensor: The op result, recorded when any input requires a gradient.
    """
    try:
        fn = _OP_REGISTRY[kind]
    except KeyError:
        raise ValueError(f'Unknown op kind {kind!r}; known: {builtins.sorted(_OP_REGISTRY)}') from None
    return fn(*inputs, **(attrs or {}))


def op_kinds() -> Tuple[str, ...]:
    """Return the registered op kind names."""
    return tuple(builtins.sorted(_OP_REGISTRY))


__all__ = [name for name in _OP_REGISTRY] + ['forward_op', 'op_kinds', 'as_tensor', 'unbroadcast', 'is_grad_enabled']
