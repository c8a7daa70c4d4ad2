"""Central finite-difference gradient checks."""

from typing import Callable, Dict, Optional, Sequence

import numpy as np

from dimaug.tensor.core import Tensor, backward


def numerical_gradient(
    fn: Callable[[], Tensor],
    param: Tensor,
    h: float = 1e-5,
) -> np.ndarray:
    """Estimate d fn / d param by central differences, perturbing ``param.data`` in place."""
    grad = np.zeros_like(param.data, dtype=np.float64)
    flat = param.data.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        plus = fn().item()
        flat[i] = original - h
        minus = fn().item()
        flat[i] = original
        grad.reshape(-1)[i] = (plus - minus) / (2 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Largest |a - n| / max(|a|, |n|, floor) over all entries."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def check_gradients(
    fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    mask: Optional[Dict[int, np.ndarray]] = None,
) -> float:
    """Compare analytic and finite-difference gradients of a scalar function.

    Args:
        fn: Zero-argument closure rebuilding the scalar output from ``params``.
        params: Leaf tensors to check (use float64 for tight tolerances).
        h: Finite-difference step.
        mask: Optional per-parameter boolean arrays (keyed by ``id``) selecting entries to compare.

    Returns:
        float: The maximum relative error over all compared entries.
    """
    grads = backward(fn(), wrt=params)
    worst = 0.0
    for param in params:
        analytic = grads[param].astype(np.float64)
        numeric = numerical_gradient(fn, param, h)
        if mask is not None and id(param) in mask:
            keep = mask[id(param)]
            analytic, numeric = analytic[keep], numeric[keep]
        worst = max(worst, max_relative_error(analytic, numeric))
    return worst
