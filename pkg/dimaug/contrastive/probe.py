"""Linear-probe and kNN evaluation of frozen representations."""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from loguru import logger

from dimaug.config import ProbeConfig
from dimaug.contrastive.encoder import Encoder, extract_features
from dimaug.contrastive.losses import cross_entropy
from dimaug.data.loader import batch_indices
from dimaug.exceptions import CorpusError
from dimaug.tensor import ops
from dimaug.tensor.core import Tensor, backward
from dimaug.tensor.optim import SGD


@dataclass
class ProbeResult:
    """Evaluation outcome of one encoder."""

    accuracy: float
    train_accuracy: float
    n_train: int
    n_test: int
    n_classes: int


def split_indices(n: int, test_fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Deterministic disjoint (train, test) index split."""
    if n < 2:
        raise CorpusError(f'Need at least 2 labeled items to split, got {n}')
    order = np.random.default_rng(seed).permutation(n)
    n_test = min(max(1, int(round(n * test_fraction))), n - 1)
    return np.sort(order[n_test:]), np.sort(order[:n_test])


def _check_labels(feats: np.ndarray, labels: np.ndarray, name: str) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1 or len(labels) != len(feats):
        raise CorpusError(f'{name}: {len(feats)} feature rows but labels of shape {labels.shape}')
    if len(labels) and labels.min() < 0:
        raise CorpusError(f'{name}: labels must be non-negative class indices')
    return labels.astype(np.int64)


def linear_probe(
    train_feats: np.ndarray,
    train_labels: np.ndarray,
    test_feats: np.ndarray,
    test_labels: np.ndarray,
    config: Optional[ProbeConfig] = None,
    seed: int = 0,
) -> ProbeResult:
    """Fit a softmax classifier on frozen features and report test accuracy.

    Features are standardized with train-set statistics; weights start at zero and are trained
    with momentum SGD on mean cross-entropy.
    """
    config = config or ProbeConfig()
    train_labels = _check_labels(train_feats, train_labels, 'train')
    test_labels = _check_labels(test_feats, test_labels, 'test')
    if len(train_labels) == 0 or len(test_labels) == 0:
        raise CorpusError('Linear probe needs non-empty train and test splits')
    unseen = np.setdiff1d(test_labels, train_labels)
    if unseen.size:
        raise CorpusError(f'Test labels {unseen.tolist()} never occur in the train split')
    n_classes = int(max(train_labels.max(), test_labels.max())) + 1
    mean = train_feats.mean(axis=0, keepdims=True)
    std = train_feats.std(axis=0, keepdims=True) + 1e-6
    x_train = ((train_feats - mean) / std).astype(np.float32)
    x_test = ((test_feats - mean) / std).astype(np.float32)

    weight = Tensor(np.zeros((x_train.shape[1], n_classes)), requires_grad=True, name='probe.weight')
    bias = Tensor(np.zeros(n_classes), requires_grad=True, name='probe.bias')
    optimizer = SGD([weight, bias], lr=config.lr, momentum=0.9, weight_decay=config.weight_decay)
    rng = np.random.default_rng(seed)

    def logits(x: np.ndarray) -> Tensor:
        return ops.add(ops.matmul(Tensor(x), weight), bias)

    for epoch in range(config.epochs):
        for idx in batch_indices(len(x_train), config.batch_size, rng, min_batch=1):
            loss = cross_entropy(logits(x_train[idx]), train_labels[idx])
            optimizer.step(backward(loss, [weight, bias]))
        if epoch == 0 or (epoch + 1) % 20 == 0:
            logger.debug(f'probe epoch {epoch + 1}/{config.epochs} loss {loss.item():.4f}')

    def accuracy(x: np.ndarray, y: np.ndarray) -> float:
        predictions = np.argmax(x @ weight.data + bias.data, axis=1)
        return float(np.mean(predictions == y))

    result = ProbeResult(
        accuracy=accuracy(x_test, test_labels),
        train_accuracy=accuracy(x_train, train_labels),
        n_train=len(train_labels),
        n_test=len(test_labels),
        n_classes=n_classes,
    )
    logger.info(f'Linear probe accuracy {result.accuracy:.4f} (train {result.train_accuracy:.4f})')
    return result


def knn_eval(
    train_feats: np.ndarray,
    train_labels: np.ndarray,
    test_feats: np.ndarray,
    test_labels: np.ndarray,
    k: int = 5,
) -> float:
    """Majority vote over the k nearest training features; ties go to the lowest class."""
    train_labels = _check_labels(train_feats, train_labels, 'train')
    test_labels = _check_labels(test_feats, test_labels, 'test')
    if len(train_labels) < k:
        raise CorpusError(f'kNN needs at least k={k} training items, got {len(train_labels)}')
    if len(test_labels) == 0:
        raise CorpusError('kNN needs a non-empty test split')
    train = np.asarray(train_feats, dtype=np.float64)
    test = np.asarray(test_feats, dtype=np.float64)
    diff = test[:, None, :] - train[None, :, :]
    dist = np.einsum('ijk,ijk->ij', diff, diff)
    neighbours = np.argsort(dist, axis=1, kind='stable')[:, :k]
    n_classes = int(train_labels.max()) + 1
    votes = [np.bincount(train_labels[row], minlength=n_classes).argmax() for row in neighbours]
    accuracy = float(np.mean(np.asarray(votes) == test_labels))
    logger.info(f'kNN (k={k}) accuracy {accuracy:.4f}')
    return accuracy


def probe_encoder(
    encoder: Encoder,
    images: np.ndarray,
    labels: np.ndarray,
    config: Optional[ProbeConfig] = None,
    seed: int = 0,
) -> Tuple[ProbeResult, float]:
    """Split a labeled corpus, extract frozen features and run both evaluations."""
    config = config or ProbeConfig()
    labels = _check_labels(images, labels, 'corpus')
    train_idx, test_idx = split_indices(len(labels), config.test_fraction, seed)
    feats = extract_features(encoder, images)
    probe = linear_probe(feats[train_idx], labels[train_idx], feats[test_idx], labels[test_idx], config, seed)
    k = min(config.knn_k, len(train_idx))
    knn = knn_eval(feats[train_idx], labels[train_idx], feats[test_idx], labels[test_idx], k)
    return probe, knn
