"""Contrastive pretraining loop."""

import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np
from loguru import logger

from dimaug.augment.base import base_augment_batch, bilinear_resize
from dimaug.augment.policy import PolicyParams, apply_deployed, policy_forward_search
from dimaug.config import RunConfig
from dimaug.contrastive.encoder import Encoder, Projector, build_models, extract_features
from dimaug.contrastive.losses import ntxent
from dimaug.data.loader import Prefetcher, batch_indices, spawn_streams
from dimaug.exceptions import LIDError, TrainingError
from dimaug.lid import collapse_diagnostics
from dimaug.models import DeployedPolicy
from dimaug.tensor.core import Tensor, backward, no_grad
from dimaug.tensor.optim import build_optimizer


PolicySource = Union[None, DeployedPolicy, PolicyParams]
EpochCallback = Callable[[Dict[str, Any]], None]

DIAGNOSTIC_BATCH = 256


@dataclass
class PretrainResult:
    """Trained models and the per-epoch training log."""

    encoder: Encoder
    projector: Projector
    log: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.log[-1]['loss'] if self.log else float('nan')


def _policy_state(policy: PolicySource) -> Any:
    if policy is None:
        return 'base'
    if isinstance(policy, PolicyParams):
        return policy.snapshot()
    return policy.model_dump(mode='json')


def make_views(
    images: np.ndarray,
    config: RunConfig,
    policy: PolicySource,
    base_rng: np.random.Generator,
    policy_rng: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray]:
    """Base crop/flip views, then the policy (if any) applied to each view."""
    v1, v2 = base_augment_batch(images, base_rng, config.train.resolution, config.base_augment)
    if policy is None:
        return v1, v2
    if isinstance(policy, PolicyParams):
        with no_grad():
            return (
                policy_forward_search(Tensor(v1), policy).data,
                policy_forward_search(Tensor(v2), policy).data,
            )
    kernel = config.augment.blur_kernel_size
    return (
        apply_deployed(v1, policy, policy_rng, kernel).data,
        apply_deployed(v2, policy, policy_rng, kernel).data,
    )


def pretrain(
    images: np.ndarray,
    config: RunConfig,
    policy: PolicySource = None,
    seed: Optional[Any] = None,
    epochs: Optional[int] = None,
    on_epoch: Optional[EpochCallback] = None,
) -> PretrainResult:
    """Train a freshly initialized encoder and projector with NT-Xent.

    Args:
        images: Unlabeled (N, C, H, W) corpus in [0, 1].
        config: Run configuration (train, base_augment, encoder, lid sections).
        policy: None for base views only, a DeployedPolicy, or PolicyParams in blend mode.
        seed: Seed (int or SeedSequence) for initialization, shuffling and augmentation.
        epochs: Overrides ``config.train.epochs``.
        on_epoch: Called with each epoch's log record.

    Returns:
        PretrainResult: The trained models and per-epoch log.

    Raises:
        TrainingError: If the loss becomes non-finite; carries a diagnostic snapshot.
    """
    if len(images) < 2:
        raise TrainingError(f'Need at least 2 unlabeled images, got {len(images)}')
    seed = config.seed if seed is None else seed
    init_seq, shuffle_seq, base_seq, policy_seq = spawn_streams(seed, 4)
    encoder, projector = build_models(config.encoder, config.train.resolution, init_seq)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    base_rng = np.random.default_rng(base_seq)
    policy_rng = np.random.default_rng(policy_seq)
    train_cfg = config.train
    optimizer = build_optimizer(
        train_cfg.optimizer,
        encoder.parameters() + projector.parameters(),
        lr=train_cfg.lr,
        weight_decay=train_cfg.weight_decay,
        momentum=train_cfg.momentum,
    )
    diag_images = images[:DIAGNOSTIC_BATCH]
    n_epochs = epochs or train_cfg.epochs
    result = PretrainResult(encoder=encoder, projector=projector)
    policy_before = _policy_state(policy) if isinstance(policy, PolicyParams) else None

    for epoch in range(n_epochs):
        start = time.perf_counter()
        encoder.train()
        projector.train()
        batches = batch_indices(len(images), train_cfg.batch_size, shuffle_rng)

        def produce(idx: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
            return make_views(images[idx], config, policy, base_rng, policy_rng)

        losses = []
        for b, (v1, v2) in enumerate(Prefetcher(batches, produce, train_cfg.prefetch)):
            views = Tensor(np.concatenate([v1, v2], axis=0))
            loss = ntxent(projector(encoder(views)), train_cfg.temperature)
            value = loss.item()
            if not np.isfinite(value):
                snapshot = {'epoch': epoch, 'batch': b, 'loss': value, 'policy': _policy_state(policy)}
                logger.error(f'Non-finite contrastive loss at epoch {epoch}, batch {b}')
                raise TrainingError(f'Non-finite loss {value} at epoch {epoch}, batch {b}', snapshot)
            optimizer.step(backward(loss))
            losses.append(value)
            logger.debug(f'epoch {epoch} batch {b} loss {value:.4f}')

        record = {'epoch': epoch, 'loss': float(np.mean(losses)), 'seconds': time.perf_counter() - start}
        record.update(_diagnostics(encoder, diag_images, config))
        if not all(np.isfinite(p.data).all() for p in encoder.parameters()):
            raise TrainingError(f'Non-finite encoder weights after epoch {epoch}', {'epoch': epoch})
        result.log.append(record)
        level = 'WARNING' if record.get('collapse') else 'INFO'
        logger.log(
            level,
            f"pretrain epoch {epoch + 1}/{n_epochs}: loss {record['loss']:.4f} "
            f"mean LID {record.get('mean_lid', float('nan')):.3f} collapse={record.get('collapse')}",
        )
        if on_epoch is not None:
            on_epoch(record)

    if policy_before is not None and _policy_state(policy) != policy_before:
        raise TrainingError('Policy parameters changed during pretraining')
    encoder.eval()
    projector.eval()
    return result


def _diagnostics(encoder: Encoder, images: np.ndarray, config: RunConfig) -> Dict[str, Any]:
    res = config.train.resolution
    if images.shape[-1] != res or images.shape[-2] != res:
        images = np.stack([bilinear_resize(img, res, res) for img in images])
    feats = extract_features(encoder, images)
    try:
        diag = collapse_diagnostics(feats, config.lid)
    except LIDError:
        return {}
    return {
        'mean_lid': diag['mean_lid'],
        'collapse': diag['collapse_fraction'] > 0.5,
        'effective_rank': diag['effective_rank'],
    }
