"""Gradient-based policy search on a frozen encoder.

The loop is shared by every objective: each batch is prepared by the objective, augmented with
``policy_forward_search`` and scored by the objective; only the policy parameters are updated.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Protocol, Tuple

import numpy as np
from loguru import logger

from dimaug.augment.base import base_augment_batch
from dimaug.augment.policy import PolicyParams, policy_forward_search
from dimaug.config import LIDConfig, RunConfig
from dimaug.contrastive.encoder import Encoder, Projector
from dimaug.contrastive.losses import cross_entropy, ntxent
from dimaug.data.loader import batch_indices
from dimaug.exceptions import SearchError
from dimaug.lid import dda_loss
from dimaug.search.rotation import rotated_copies
from dimaug.tensor import ops
from dimaug.tensor.core import Tensor, backward
from dimaug.tensor.nn import Linear, Module
from dimaug.tensor.optim import build_optimizer


Components = Dict[str, float]


class SearchObjective(Protocol):
    """Loss computed on policy-augmented inputs."""

    name: str
    min_batch: int

    def prepare(self, images: np.ndarray, rng: np.random.Generator) -> Tuple[np.ndarray, Any]:
        """Return the inputs to augment plus any per-batch context for ``loss``."""
        ...

    def loss(self, augmented: Tensor, context: Any) -> Tuple[Tensor, Components]:
        """Scalar loss and named diagnostic components."""
        ...


class DDAObjective:
    """Negative mean log-LID of the frozen encoder's representations."""

    name = 'dda'

    def __init__(self, encoder: Encoder, lid_config: Optional[LIDConfig] = None):
        """Score batches with ``encoder`` and the given LID estimator settings."""
        self.encoder = encoder
        self.lid_config = lid_config or LIDConfig()
        self.min_batch = self.lid_config.k + 1

    def prepare(self, images: np.ndarray, rng: np.random.Generator) -> Tuple[np.ndarray, Any]:
        return images, None

    def loss(self, augmented: Tensor, context: Any) -> Tuple[Tensor, Components]:
        result = dda_loss(self.encoder(augmented), self.lid_config)
        return result.loss, {
            'mean_lid': result.mean_lid,
            'collapsed': float(np.sum(result.collapsed)),
        }


class SelfAugmentObjective:
    """Min-max objective: rotation-prediction loss minus NT-Xent on augmented view pairs.

    Each batch holds two base-augmented views plus a randomly rotated copy of the first view.
    Photometric policies commute with quarter turns, so rotating before augmentation is the
    same as rotating after.
    """

    name = 'selfaugment'
    min_batch = 2

    def __init__(
        self,
        encoder: Encoder,
        projector: Projector,
        rotation_head: Linear,
        config: RunConfig,
    ):
        """Score batches with frozen encoder, projector and rotation head."""
        self.encoder = encoder
        self.projector = projector
        self.rotation_head = rotation_head
        self.config = config

    def prepare(self, images: np.ndarray, rng: np.random.Generator) -> Tuple[np.ndarray, Any]:
        v1, v2 = base_augment_batch(images, rng, self.config.train.resolution, self.config.base_augment)
        rotated, labels = rotated_copies(v1, rng)
        return np.concatenate([v1, v2, rotated], axis=0), labels

    def components(self, augmented: Tensor, labels: np.ndarray) -> Tuple[Tensor, Tensor]:
        """(L_SS, L_NTXent) for one prepared and augmented batch."""
        m = len(labels)
        z = self.encoder(augmented)
        pair = self.projector(z[: 2 * m])
        contrastive = ntxent(pair, self.config.train.temperature)
        rotation = cross_entropy(self.rotation_head(z[2 * m :]), labels)
        return rotation, contrastive

    def loss(self, augmented: Tensor, context: Any) -> Tuple[Tensor, Components]:
        rotation, contrastive = self.components(augmented, context)
        return ops.sub(rotation, contrastive), {
            'rotation_loss': rotation.item(),
            'ntxent': contrastive.item(),
        }


@dataclass
class SearchResult:
    """Optimized policy parameters and the per-epoch search log."""

    params: PolicyParams
    log: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def epoch_losses(self) -> List[float]:
        return [record['loss'] for record in self.log]


def _frozen(modules: List[Module]) -> List[Tuple[Module, List[bool], bool]]:
    state = [(m, [p.requires_grad for p in m.parameters()], m.training) for m in modules]
    for module in modules:
        module.freeze()
    return state


def _restore(state: List[Tuple[Module, List[bool], bool]]) -> None:
    for module, flags, training in state:
        for param, flag in zip(module.parameters(), flags):
            param.requires_grad = flag
        module.train(training)


def run_policy_search(
    images: np.ndarray,
    objective: SearchObjective,
    config: RunConfig,
    params: Optional[PolicyParams] = None,
    frozen: Optional[List[Module]] = None,
    seed: Optional[int] = None,
    epochs: Optional[int] = None,
) -> SearchResult:
    """Optimize policy parameters against an objective on fixed networks.

    Args:
        images: (N, C, H, W) images at the encoder resolution.
        objective: Prepares batches and scores augmented inputs.
        config: Run configuration (search, augment and lid sections).
        params: Starting parameters; fresh zero-initialized ones from ``config.augment`` if None.
        frozen: Modules held fixed (eval mode, no gradients) during the search.
        seed: Seed for batch order and batch preparation.
        epochs: Overrides ``config.search.epochs``.

    Returns:
        SearchResult: The optimized parameters and per-epoch mean losses.

    Raises:
        SearchError: If a loss is non-finite; carries the offending policy snapshot.
    """
    params = params or PolicyParams.from_config(config.augment)
    search_cfg = config.search
    batch_size = config.search_batch_size
    rng = np.random.default_rng(config.seed if seed is None else seed)
    optimizer = build_optimizer(search_cfg.optimizer, params.parameters(), lr=search_cfg.lr)
    n_epochs = epochs or search_cfg.epochs
    result = SearchResult(params=params)
    state = _frozen(frozen or [])
    try:
        for epoch in range(n_epochs):
            losses = []
            extras: Dict[str, List[float]] = {}
            for b, idx in enumerate(batch_indices(len(images), batch_size, rng, min_batch=objective.min_batch)):
                inputs, context = objective.prepare(images[idx], rng)
                augmented = policy_forward_search(Tensor(inputs), params)
                loss, components = objective.loss(augmented, context)
                value = loss.item()
                if not np.isfinite(value):
                    snapshot = {'epoch': epoch, 'batch': b, 'loss': value, 'policy': params.snapshot()}
                    logger.error(f'Non-finite {objective.name} search loss at epoch {epoch}, batch {b}')
                    raise SearchError(f'Non-finite search loss {value} at epoch {epoch}, batch {b}', snapshot)
                optimizer.step(backward(loss, params.parameters()))
                losses.append(value)
                for key, component in components.items():
                    extras.setdefault(key, []).append(component)
            if not losses:
                raise SearchError(f'No search batch of at least {objective.min_batch} images could be formed')
            record = {'epoch': epoch, 'loss': float(np.mean(losses))}
            record.update({key: float(np.mean(values)) for key, values in extras.items()})
            result.log.append(record)
            if record.get('collapsed'):
                logger.warning(f"search epoch {epoch + 1}: {record['collapsed']:.1f} collapsed neighbourhoods per batch")
            logger.info(f"{objective.name} search epoch {epoch + 1}/{n_epochs}: loss {record['loss']:.4f}")
    finally:
        _restore(state)
    return result


def dda_search(
    encoder: Encoder,
    images: np.ndarray,
    config: RunConfig,
    params: Optional[PolicyParams] = None,
    seed: Optional[int] = None,
) -> SearchResult:
    """Minimize ``-mean ln LID`` of frozen-encoder representations of augmented images."""
    objective = DDAObjective(encoder, config.lid)
    return run_policy_search(images, objective, config, params=params, frozen=[encoder], seed=seed)


def selfaugment_search(
    encoder: Encoder,
    projector: Projector,
    rotation_head: Linear,
    images: np.ndarray,
    config: RunConfig,
    params: Optional[PolicyParams] = None,
    seed: Optional[int] = None,
) -> SearchResult:
    """Minimize rotation-prediction loss minus NT-Xent with every network frozen."""
    objective = SelfAugmentObjective(encoder, projector, rotation_head, config)
    return run_policy_search(
        images, objective, config, params=params, frozen=[encoder, projector, rotation_head], seed=seed
    )
