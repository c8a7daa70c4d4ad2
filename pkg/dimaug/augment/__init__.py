"""Differentiable augmentation operations and policies."""

from dimaug.augment.base import base_augment, base_augment_batch, bilinear_resize
from dimaug.augment.ops import apply_aug, hue_rotation_matrix
from dimaug.augment.policy import (
    PolicyParams,
    apply_deployed,
    finalize_policy,
    load_policy,
    parse_policy,
    policy_forward_search,
    policy_to_json,
    save_policy,
    subpolicy_forward,
)
from dimaug.augment.presets import excessive_policy, identity_policy, manual_policy, random_policy, simclr_policy


__all__ = [
    'PolicyParams',
    'apply_aug',
    'apply_deployed',
    'base_augment',
    'base_augment_batch',
    'bilinear_resize',
    'excessive_policy',
    'finalize_policy',
    'hue_rotation_matrix',
    'identity_policy',
    'load_policy',
    'manual_policy',
    'parse_policy',
    'policy_forward_search',
    'policy_to_json',
    'random_policy',
    'save_policy',
    'simclr_policy',
    'subpolicy_forward',
]
