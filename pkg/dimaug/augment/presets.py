"""Fixed reference policies expressed in the search space."""

from typing import Optional

import numpy as np

from dimaug.models import (
    MAGNITUDE_SPECS,
    OP_ORDER,
    AugOpKind,
    DeployedPolicy,
    PolicyOp,
    SamplingMode,
    SubPolicy,
)


def random_policy(seed: Optional[int] = None, n_subpolicies: int = 5, rng: Optional[np.random.Generator] = None) -> DeployedPolicy:
    """Draw one operation per sub-policy uniformly, with a uniform in-range magnitude.

    GaussianBlur sigma is drawn from [0, 2].
    """
    rng = rng if rng is not None else np.random.default_rng(seed)
    subpolicies = []
    for _ in range(n_subpolicies):
        kind = OP_ORDER[int(rng.integers(len(OP_ORDER)))]
        spec = MAGNITUDE_SPECS[kind]
        magnitude = float(rng.uniform(spec.low, spec.high)) if spec.parameter_count else None
        subpolicies.append(SubPolicy(ops=[PolicyOp(kind=kind, prob=1.0, magnitude=magnitude)]))
    return DeployedPolicy(mode=SamplingMode.CATEGORICAL, subpolicies=subpolicies)


def _slot(kind: AugOpKind, prob: float, low: Optional[float] = None, high: Optional[float] = None) -> SubPolicy:
    return SubPolicy(ops=[PolicyOp(kind=kind, prob=prob, magnitude=low, magnitude_high=high)])


def simclr_policy() -> DeployedPolicy:
    """Colour-jitter style policy: six slots, each applied with its listed probability.

    Jitter strengths are sampled per image from intervals (brightness up to 0.8, contrast and
    saturation factors 1 +- 0.8, hue +-1.26 rad, blur sigma in [0, 2]).
    """
    return DeployedPolicy(
        subpolicies=[
            _slot(AugOpKind.BRIGHTNESS, 0.8, 0.0, 0.8),
            _slot(AugOpKind.CONTRAST, 0.8, 0.2, 1.0),
            _slot(AugOpKind.SATURATION, 0.8, 0.2, 1.8),
            _slot(AugOpKind.HUE, 0.8, -1.26, 1.26),
            _slot(AugOpKind.GRAY, 0.2),
            _slot(AugOpKind.GAUSSIAN_BLUR, 0.5, 0.0, 2.0),
        ]
    )


def manual_policy() -> DeployedPolicy:
    """Hand-picked policy of the kind used for supervised segmentation.

    Rotation up to 30 degrees, contrast, Gaussian noise and Gaussian blur (sigma 0.1 to 2.0),
    each applied with probability 0.8 and a per-image strength.
    """
    return DeployedPolicy(
        subpolicies=[
            _slot(AugOpKind.ROTATE, 0.8, -30.0, 30.0),
            _slot(AugOpKind.CONTRAST, 0.8, 0.0, 1.0),
            _slot(AugOpKind.GAUSSIAN_NOISE, 0.8, 0.0, 0.2),
            _slot(AugOpKind.GAUSSIAN_BLUR, 0.8, 0.1, 2.0),
        ]
    )


def excessive_policy() -> DeployedPolicy:
    """Destructive policy for collapse studies.

    Views are grayscale, squashed to at most 2% of their contrast, lifted by a per-image
    brightness in [0.2, 0.8] and posterized to one bit. Almost every view becomes a flat
    black or mid-gray frame chosen by the brightness draw, so the two views of an image
    rarely share anything the encoder could align on.
    """
    return DeployedPolicy(
        subpolicies=[
            _slot(AugOpKind.GRAY, 1.0),
            _slot(AugOpKind.CONTRAST, 1.0, 0.0, 0.02),
            _slot(AugOpKind.BRIGHTNESS, 1.0, 0.2, 0.8),
            _slot(AugOpKind.POSTERIZE, 1.0, 1.0),
        ]
    )


def identity_policy(n_subpolicies: int = 5) -> DeployedPolicy:
    """N sub-policies that always apply Identical."""
    return DeployedPolicy(subpolicies=[_slot(AugOpKind.IDENTICAL, 1.0) for _ in range(n_subpolicies)])
