"""Dense tensor with define-by-run reverse-mode differentiation.

Every op that touches a tensor with ``requires_grad`` records a ``Node`` holding its inputs and
a backward closure. Nodes carry a process-wide sequence number, so the nodes reachable from an
output, sorted by that number, form a valid tape: every node's inputs precede it.
"""

from __future__ import annotations

import contextvars
import itertools
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from dimaug.exceptions import TapeError


_DTYPES = {'float32': np.float32, 'float64': np.float64}
_EPSILON = {np.dtype(np.float32): 1e-7, np.dtype(np.float64): 1e-12}

_default_dtype: contextvars.ContextVar = contextvars.ContextVar('default_dtype', default=np.float32)
_numerics_mode: contextvars.ContextVar = contextvars.ContextVar('numerics_mode', default='training')
_grad_enabled: contextvars.ContextVar = contextvars.ContextVar('grad_enabled', default=True)

_sequence = itertools.count()

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


def get_default_dtype() -> type:
    """Return the dtype new tensors are created with."""
    return _default_dtype.get()


@contextmanager
def precision(name: str) -> Iterator[None]:
    """Temporarily switch the default dtype ('float32' or 'float64')."""
    if name not in _DTYPES:
        raise ValueError(f'Unknown precision {name!r}; expected one of {sorted(_DTYPES)}')
    token = _default_dtype.set(_DTYPES[name])
    try:
        yield
    finally:
        _default_dtype.reset(token)


def numerics_mode() -> str:
    """Return the active numerics mode ('strict' or 'training')."""
    return _numerics_mode.get()


@contextmanager
def numerics(mode: str) -> Iterator[None]:
    """Temporarily switch the numerics mode.

    In 'strict' mode log/div/sqrt raise on out-of-domain input; in 'training' mode they clamp
    at the dtype's epsilon.
    """
    if mode not in ('strict', 'training'):
        raise ValueError(f'Unknown numerics mode {mode!r}')
    token = _numerics_mode.set(mode)
    try:
        yield
    finally:
        _numerics_mode.reset(token)


def epsilon_for(dtype: Any) -> float:
    """Return the domain-guard epsilon for a dtype (1e-12 for float64, 1e-7 otherwise)."""
    return _EPSILON.get(np.dtype(dtype), 1e-7)


def is_grad_enabled() -> bool:
    """Return True when ops are being recorded."""
    return _grad_enabled.get()


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable recording for the enclosed block."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


@dataclass(eq=False)
class Node:
    """One recorded operation.

    Attributes:
        seq: Creation sequence number; inputs always have a smaller one.
        kind: Op kind name.
        inputs: Input tensors, in op argument order.
        backward_fn: Maps the output gradient to one gradient (or None) per input.
        saved: Activations kept for inspection.
    """

    seq: int
    kind: str
    inputs: Tuple['Tensor', ...]
    backward_fn: BackwardFn
    saved: Dict[str, Any] = field(default_factory=dict)


class Tensor:
    """Dense n-dimensional array that can participate in gradient recording.

    Attributes:
        data: Row-major numpy buffer (float32 or float64).
        requires_grad: Whether gradients flow to or through this tensor.
        name: Optional label used in error messages and optimizer state.
    """

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        dtype: Optional[Any] = None,
        name: Optional[str] = None,
    ):
        """Create a leaf tensor, casting ``data`` to ``dtype`` or the default dtype."""
        self.data = np.array(data, dtype=dtype or get_default_dtype())
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._node: Optional[Node] = None

    @classmethod
    def _wrap(cls, data: np.ndarray) -> 'Tensor':
        out = cls.__new__(cls)
        out.data = np.asarray(data)
        out.requires_grad = False
        out.name = None
        out._node = None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def tape_id(self) -> Optional[int]:
        """Sequence number of the node that produced this tensor, None for leaves."""
        return self._node.seq if self._node is not None else None

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float('nan')

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> 'Tensor':
        return Tensor._wrap(self.data)

    def __repr__(self) -> str:
        grad = ', requires_grad=True' if self.requires_grad else ''
        return f'Tensor(shape={self.shape}, dtype={self.dtype}{grad})'

    def __len__(self) -> int:
        return self.shape[0]

    # Operator sugar; implementations live in dimaug.tensor.ops.
    def __add__(self, other: Any) -> 'Tensor':
        from dimaug.tensor import ops

        return ops.add(self, other)

    def __radd__(self, other: Any) -> 'Tensor':
        from dimaug.tensor import ops

        return ops.add(other, self)

    def __sub__(self, other: Any) -> 'Tensor':
        from dimaug.tensor import ops

        return ops.sub(self, other)

    def __rsub__(self, other: Any) -> 'Tensor':
        from dimaug.tensor import ops

        return ops.sub(other, self)

    def __mul__(self, other: Any) -> 'Tensor':
        from dimaug.tensor import ops

        return ops.mul(self, other)

    def __rmul__(self, other: Any) -> 'Tensor':
        from dimaug.tensor import ops

        return ops.mul(other, self)

    def __truediv__(self, other: Any) -> 'Tensor':
        from dimaug.tensor import ops

        return ops.div(self, other)

    def __rtruediv__(self, other: Any) -> 'Tensor':
        from dimaug.tensor import ops

        return ops.div(other, self)

    def __neg__(self) -> 'Tensor':
        from dimaug.tensor import ops

        return ops.neg(self)

    def __pow__(self, exponent: float) -> 'Tensor':
        from dimaug.tensor import ops

        return ops.pow(self, exponent)

    def __matmul__(self, other: Any) -> 'Tensor':
        from dimaug.tensor import ops

        return ops.matmul(self, other)

    def __getitem__(self, key: Any) -> 'Tensor':
        from dimaug.tensor import ops

        return ops.getitem(self, key)

    def reshape(self, *shape: Any) -> 'Tensor':
        from dimaug.tensor import ops

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def sum(self, axis: Any = None, keepdims: bool = False) -> 'Tensor':
        from dimaug.tensor import ops

        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Any = None, keepdims: bool = False) -> 'Tensor':
        from dimaug.tensor import ops

        return ops.mean(self, axis=axis, keepdims=keepdims)

    @property
    def T(self) -> 'Tensor':
        from dimaug.tensor import ops

        return ops.transpose(self)


def record(
    kind: str,
    data: np.ndarray,
    inputs: Sequence[Tensor],
    backward_fn: BackwardFn,
    saved: Optional[Dict[str, Any]] = None,
) -> Tensor:
    """Wrap an op result and record it when any input requires a gradient."""
    out = Tensor._wrap(data)
    if is_grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._node = Node(next(_sequence), kind, tuple(inputs), backward_fn, saved or {})
    return out


class Tape:
    """Ordered record of the operations that produced an output.

    Attributes:
        nodes: Nodes reachable from the output, in creation order.
        leaves: Leaf tensors with ``requires_grad`` reachable from the output.
    """

    def __init__(self, nodes: List[Node], leaves: List[Tensor]):
        """Initialize from already-ordered nodes and leaves."""
        self.nodes = nodes
        self.leaves = leaves

    @classmethod
    def trace(cls, output: Tensor) -> 'Tape':
        """Collect every node reachable from ``output`` in topological order."""
        if output._node is None:
            raise TapeError('Output is detached: it was not produced by a recorded op')
        seen_nodes: Dict[int, Node] = {}
        seen_leaves: Dict[int, Tensor] = {}
        stack = [output._node]
        while stack:
            node = stack.pop()
            if id(node) in seen_nodes:
                continue
            seen_nodes[id(node)] = node
            for inp in node.inputs:
                if inp._node is not None:
                    stack.append(inp._node)
                elif inp.requires_grad:
                    seen_leaves[id(inp)] = inp
        nodes = sorted(seen_nodes.values(), key=lambda n: n.seq)
        return cls(nodes, list(seen_leaves.values()))

    def __len__(self) -> int:
        return len(self.nodes)


class Gradients:
    """Mapping from leaf tensors (by identity) to gradient arrays."""

    def __init__(self) -> None:
        """Create an empty gradient map."""
        self._entries: Dict[int, Tuple[Tensor, np.ndarray]] = {}

    def __setitem__(self, tensor: Tensor, grad: np.ndarray) -> None:
        self._entries[id(tensor)] = (tensor, grad)

    def __getitem__(self, tensor: Tensor) -> np.ndarray:
        try:
            return self._entries[id(tensor)][1]
        except KeyError:
            raise KeyError(f'No gradient recorded for {tensor!r}') from None

    def __contains__(self, tensor: Tensor) -> bool:
        return id(tensor) in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, tensor: Tensor, default: Optional[np.ndarray] = None) -> Optional[np.ndarray]:
        entry = self._entries.get(id(tensor))
        return entry[1] if entry is not None else default

    def items(self) -> Iterator[Tuple[Tensor, np.ndarray]]:
        return iter(self._entries.values())


def backward(output: Tensor, wrt: Optional[Sequence[Tensor]] = None) -> Gradients:
    """Differentiate a scalar output with respect to every reachable leaf.

    Args:
        output: Single-element tensor produced by recorded ops.
        wrt: Extra leaves to report; unreachable ones receive zero gradients. Each must
            require gradients.

    Returns:
        Gradients: Gradient for every reachable leaf and every tensor in ``wrt``.

    Raises:
        TapeError: If the output is not scalar or not on a tape. Also raised when a
            tensor in ``wrt`` does not require gradients.
    """
    frozen = [t for t in wrt or () if not t.requires_grad]
    if frozen:
        raise TapeError(f'backward: {len(frozen)} tensor(s) in wrt do not require gradients, first {frozen[0]!r}')
    if output.size != 1:
        raise TapeError(f'backward requires a scalar output, got shape {output.shape}')
    tape = Tape.trace(output)

    node_grads: Dict[int, np.ndarray] = {id(output._node): np.ones_like(output.data)}
    leaf_grads: Dict[int, np.ndarray] = {}
    for node in reversed(tape.nodes):
        grad = node_grads.pop(id(node), None)
        if grad is None:
            continue
        input_grads = node.backward_fn(grad)
        for inp, inp_grad in zip(node.inputs, input_grads):
            if inp_grad is None or not inp.requires_grad:
                continue
            if inp_grad.shape != inp.shape:
                raise TapeError(
                    f'{node.kind} backward produced gradient of shape {inp_grad.shape} '
                    f'for input of shape {inp.shape}'
                )
            target = node_grads if inp._node is not None else leaf_grads
            key = id(inp._node) if inp._node is not None else id(inp)
            if key in target:
                target[key] = target[key] + inp_grad
            else:
                target[key] = inp_grad

    result = Gradients()
    for leaf in tape.leaves:
        result[leaf] = leaf_grads.get(id(leaf), np.zeros_like(leaf.data))
    for tensor in wrt or ():
        if tensor not in result:
            result[tensor] = np.zeros_like(tensor.data)
    return result
