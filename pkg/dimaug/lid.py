"""Local intrinsic dimensionality estimation and the dimensionality-driven search loss.

Estimates come from each query's k nearest-neighbour distances inside a batch. Neighbour
selection is frozen at forward time, so gradients flow through the selected distances only.
Degenerate neighbourhoods (all distances equal or zero) are guarded and flagged as collapsed
instead of raising, because collapsed encoders are an expected outcome of bad policies.
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from loguru import logger
from scipy.spatial import cKDTree

from dimaug.config import LIDConfig
from dimaug.exceptions import LIDError
from dimaug.models import LIDEstimate
from dimaug.tensor import ops
from dimaug.tensor.core import Tensor, epsilon_for, no_grad, precision


def _guard(config_epsilon: float, dtype) -> float:
    return max(config_epsilon, epsilon_for(dtype))


def pairwise_distances(z: Tensor, mode: str = 'euclidean') -> Tensor:
    """Euclidean distance matrix between rows of an M x d batch.

    Args:
        z: Representations, M >= 2 rows.
        mode: 'euclidean' on raw rows, or 'normalized' to L2-normalize rows first.

    Returns:
        Tensor: Symmetric M x M distances with an exactly zero diagonal.

    Raises:
        LIDError: If the batch has fewer than 2 rows or zero feature dimension.
    """
    if z.ndim != 2 or z.shape[1] == 0:
        raise LIDError(f'pairwise_distances needs an M x d matrix with d > 0, got shape {z.shape}')
    if z.shape[0] < 2:
        raise LIDError(f'pairwise_distances needs at least 2 points, got {z.shape[0]}')
    if mode == 'normalized':
        z = ops.l2_normalize(z, axis=1)
    elif mode != 'euclidean':
        raise LIDError(f'Unknown distance mode {mode!r}')
    return ops.sqrt(ops.pairwise_sq_dist(z))


def knn_distances(d: Tensor, k: int) -> Tuple[Tensor, np.ndarray]:
    """Per row, the k smallest off-diagonal distances in ascending order.

    Ties go to the lower column index.

    Returns:
        Tuple[Tensor, np.ndarray]: (M x k distances, M x k neighbour indices).
    """
    m = d.shape[0]
    if not 1 <= k < m:
        raise LIDError(f'k must satisfy 1 <= k < M, got k={k}, M={m}')
    masked = d.data.astype(np.float64, copy=True)
    np.fill_diagonal(masked, np.inf)
    indices = np.argsort(masked, axis=1, kind='stable')[:, :k]
    return ops.take_along_axis(d, indices, axis=1), indices


def lid_mom(distances: Tensor, epsilon: float = 1e-8, max_estimate: float = 1e6) -> Tuple[Tensor, np.ndarray]:
    """Method-of-moments estimate ``mu / (w - mu)`` per row of sorted neighbour distances.

    Rows with ``w - mu`` below epsilon are collapsed: their estimate is ``mu / epsilon``, and
    every estimate is clamped to [epsilon, max_estimate].

    Returns:
        Tuple[Tensor, np.ndarray]: (estimates of shape (M,), collapse flags).
    """
    guard = _guard(epsilon, distances.dtype)
    w = distances[:, -1]
    mu = ops.mean(distances, axis=1)
    gap = ops.sub(w, mu)
    collapsed = gap.data < guard
    safe_gap = ops.where(collapsed, guard, gap)
    estimate = ops.div(mu, safe_gap)
    return ops.clamp(estimate, guard, max_estimate), collapsed


def lid_mle(distances: Tensor, epsilon: float = 1e-8, max_estimate: float = 1e6) -> Tuple[Tensor, np.ndarray]:
    """Maximum-likelihood estimate ``-(mean_i ln(r_i / w))^-1`` per row.

    The k-th term contributes ln 1 = 0. Rows whose mean log-ratio is at least ``-epsilon`` are
    collapsed: all-zero neighbourhoods get ``epsilon``, equal nonzero ones ``max_estimate``.
    """
    guard = _guard(epsilon, distances.dtype)
    w_data = distances.data[:, -1]
    zero_rows = w_data < guard
    w = ops.where(zero_rows, 1.0, distances[:, -1])
    ratios = ops.div(distances, ops.reshape(w, (-1, 1)))
    mean_log = ops.mean(ops.log(ops.clamp(ratios, low=guard)), axis=1)
    collapsed = zero_rows | (mean_log.data >= -guard)
    safe = ops.where(collapsed, -1.0, mean_log)
    estimate = ops.clamp(ops.neg(ops.div(1.0, safe)), guard, max_estimate)
    fallback = np.where(zero_rows, guard, max_estimate)
    return ops.where(collapsed, Tensor(fallback, dtype=estimate.dtype), estimate), collapsed


_ESTIMATORS = {'mom': lid_mom, 'mle': lid_mle}


@dataclass
class LIDResult:
    """Loss plus per-query diagnostics for one batch."""

    loss: Tensor
    estimates: Tensor
    collapsed: np.ndarray
    neighbor_distances: Tensor

    @property
    def any_collapsed(self) -> bool:
        return bool(self.collapsed.any())

    @property
    def mean_lid(self) -> float:
        return float(np.mean(self.estimates.data))

    @property
    def median_lid(self) -> float:
        return float(np.median(self.estimates.data))


def batch_lid(z: Tensor, config: Optional[LIDConfig] = None) -> Tuple[Tensor, np.ndarray, Tensor]:
    """Estimates, collapse flags and neighbour distances for every row of ``z``."""
    config = config or LIDConfig()
    if z.shape[0] <= config.k:
        raise LIDError(f'Batch size {z.shape[0]} must exceed k={config.k}')
    dist = pairwise_distances(z, config.distance)
    neighbors, _ = knn_distances(dist, config.k)
    estimates, collapsed = _ESTIMATORS[config.estimator](neighbors, config.epsilon, config.max_estimate)
    return estimates, collapsed, neighbors


def dda_loss(z: Tensor, config: Optional[LIDConfig] = None) -> LIDResult:
    """Negative mean log-LID of a representation batch.

    Args:
        z: M x d representations (M > k).
        config: Estimator settings.

    Returns:
        LIDResult: Scalar loss ``-(1/M) sum_i ln LID_i`` and diagnostics. Collapse flags never
        raise; they are reported for the caller to log.
    """
    estimates, collapsed, neighbors = batch_lid(z, config)
    loss = ops.neg(ops.mean(ops.log(estimates)))
    if collapsed.any():
        logger.debug(f'{int(collapsed.sum())}/{len(collapsed)} collapsed neighbourhoods in batch')
    return LIDResult(loss=loss, estimates=estimates, collapsed=collapsed, neighbor_distances=neighbors)


def estimate_lid(points: np.ndarray, config: Optional[LIDConfig] = None) -> List[LIDEstimate]:
    """Estimate LID for every row of a large point matrix (no gradients).

    Neighbours come from a KD-tree over the whole matrix; the query itself is dropped.
    """
    config = config or LIDConfig()
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] == 0:
        raise LIDError(f'Expected an n x d matrix with d > 0, got shape {points.shape}')
    if points.shape[0] <= config.k:
        raise LIDError(f'Need more than k={config.k} points, got {points.shape[0]}')
    if config.distance == 'normalized':
        norms = np.maximum(np.linalg.norm(points, axis=1, keepdims=True), 1e-12)
        points = points / norms
    distances, _ = cKDTree(points).query(points, k=config.k + 1)
    distances = np.sort(distances[:, 1:], axis=1)
    with precision('float64'), no_grad():
        estimates, collapsed = _ESTIMATORS[config.estimator](
            Tensor(distances), config.epsilon, config.max_estimate
        )
    return [
        LIDEstimate(
            query_index=i,
            estimate=float(estimates.data[i]),
            neighbor_distances=distances[i].tolist(),
            collapsed=bool(collapsed[i]),
        )
        for i in range(points.shape[0])
    ]


def effective_rank(z: np.ndarray) -> float:
    """exp of the entropy of normalized singular values of the centred batch."""
    centred = np.asarray(z, dtype=np.float64) - np.mean(z, axis=0, keepdims=True)
    s = np.linalg.svd(centred, compute_uv=False)
    total = s.sum()
    if total <= 0:
        return 0.0
    p = s / total
    p = p[p > 0]
    return float(np.exp(-(p * np.log(p)).sum()))


def collapse_diagnostics(z: np.ndarray, config: Optional[LIDConfig] = None) -> dict:
    """Mean and median LID, collapsed fraction and effective rank of a representation batch."""
    config = config or LIDConfig()
    with precision('float64'), no_grad():
        estimates, collapsed, _ = batch_lid(Tensor(np.asarray(z, dtype=np.float64)), config)
    return {
        'mean_lid': float(np.mean(estimates.data)),
        'median_lid': float(np.median(estimates.data)),
        'collapse_fraction': float(np.mean(collapsed)),
        'effective_rank': effective_rank(z),
    }
