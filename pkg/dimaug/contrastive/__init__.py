"""Contrastive encoder, losses, training and evaluation."""

from dimaug.contrastive.checkpoint import load_checkpoint, load_modules, save_checkpoint, save_modules
from dimaug.contrastive.encoder import Encoder, Projector, build_models, extract_features
from dimaug.contrastive.losses import cross_entropy, ntxent
from dimaug.contrastive.probe import ProbeResult, knn_eval, linear_probe, probe_encoder, split_indices
from dimaug.contrastive.trainer import PretrainResult, make_views, pretrain


__all__ = [
    'Encoder',
    'PretrainResult',
    'ProbeResult',
    'Projector',
    'build_models',
    'cross_entropy',
    'extract_features',
    'knn_eval',
    'linear_probe',
    'load_checkpoint',
    'load_modules',
    'make_views',
    'ntxent',
    'pretrain',
    'probe_encoder',
    'save_checkpoint',
    'save_modules',
    'split_indices',
]
