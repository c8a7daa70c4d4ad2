"""Contrastive and classification losses."""

import numpy as np

from dimaug.exceptions import TensorShapeError
from dimaug.tensor import ops
from dimaug.tensor.core import Tensor


SELF_MASK = -1e9


def ntxent(embeddings: Tensor, temperature: float) -> Tensor:
    """Normalized-temperature cross-entropy over 2M unit-norm embeddings.

    Rows ``i`` and ``i + M`` are the two views of image ``i``. Each anchor is scored against
    its positive and the 2M - 2 other embeddings; self-similarity is excluded.

    Args:
        embeddings: (2M, e) L2-normalized rows.
        temperature: Similarity temperature (> 0).

    Returns:
        Tensor: Mean loss over all 2M anchors.

    Raises:
        TensorShapeError: If there are fewer than 2 images or an odd number of rows.
    """
    n_rows = embeddings.shape[0]
    if embeddings.ndim != 2 or n_rows % 2:
        raise TensorShapeError(f'ntxent: expected (2M, e) embeddings, got {embeddings.shape}')
    m = n_rows // 2
    if m < 2:
        raise TensorShapeError(f'ntxent: need M >= 2 images for negatives, got M={m}')
    if temperature <= 0:
        raise ValueError(f'ntxent temperature must be positive, got {temperature}')
    sim = ops.div(ops.matmul(embeddings, ops.transpose(embeddings)), temperature)
    mask = Tensor(np.eye(n_rows) * SELF_MASK, dtype=sim.dtype)
    log_probs = ops.log_softmax(ops.add(sim, mask), axis=1)
    positives = np.concatenate([np.arange(m, n_rows), np.arange(0, m)]).reshape(-1, 1)
    return ops.neg(ops.mean(ops.take_along_axis(log_probs, positives, axis=1)))


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy for integer labels."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1, 1)
    picked = ops.take_along_axis(ops.log_softmax(logits, axis=1), labels, axis=1)
    return ops.neg(ops.mean(picked))
