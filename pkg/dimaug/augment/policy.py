"""Learnable augmentation policies.

During search every sub-policy is a softmax-weighted blend of all operations; after search the
policy is finalized into a ``DeployedPolicy`` that samples one operation per sub-policy and
image.
"""

import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
from loguru import logger
from pydantic import ValidationError

from dimaug.augment.ops import apply_aug
from dimaug.exceptions import AugmentationError, PolicyFormatError
from dimaug.models import (
    MAGNITUDE_SPECS,
    NUM_OPS,
    OP_ORDER,
    AugOpKind,
    DeployedPolicy,
    PolicyOp,
    SamplingMode,
    SubPolicy,
)
from dimaug.tensor import ops
from dimaug.tensor.core import Tensor, no_grad


EXCLUDED_LOGIT = -1e9

_LOWS = np.array([MAGNITUDE_SPECS[k].low for k in OP_ORDER])
_SPANS = np.array([MAGNITUDE_SPECS[k].high - MAGNITUDE_SPECS[k].low for k in OP_ORDER])
_BLUR_MASK = np.array([k == AugOpKind.GAUSSIAN_BLUR for k in OP_ORDER])
_NO_MAGNITUDE = np.array([MAGNITUDE_SPECS[k].parameter_count == 0 for k in OP_ORDER])


def map_magnitudes(raw: Tensor) -> Tensor:
    """Map unconstrained raw magnitudes (last axis = operations) into their ranges.

    Ranged operations use ``low + (high - low) * sigmoid(raw)``; GaussianBlur sigma is
    ``2 * softplus(raw)``; operations without a magnitude map to 0.
    """
    shape = (1,) * (raw.ndim - 1) + (NUM_OPS,)
    lows = Tensor(_LOWS.reshape(shape), dtype=raw.dtype)
    spans = Tensor(_SPANS.reshape(shape), dtype=raw.dtype)
    ranged = ops.add(lows, ops.mul(spans, ops.sigmoid(raw)))
    blur = ops.mul(2.0, ops.softplus(raw))
    mapped = ops.where(np.broadcast_to(_BLUR_MASK.reshape(shape), raw.shape), blur, ranged)
    return ops.where(np.broadcast_to(_NO_MAGNITUDE.reshape(shape), raw.shape), 0.0, mapped)


def exclusion_offsets(excluded: Sequence[AugOpKind]) -> np.ndarray:
    """Additive logit offsets that drive excluded operations to zero weight."""
    offsets = np.zeros(NUM_OPS)
    for kind in excluded:
        offsets[kind.index] = EXCLUDED_LOGIT
    return offsets


def blend_weights(
    logits_row: Tensor,
    temperature: float,
    excluded: Sequence[AugOpKind] = (),
) -> Tensor:
    """Softmax of ``logits / temperature`` with excluded operations masked out."""
    if temperature <= 0:
        raise AugmentationError(f'Policy temperature must be positive, got {temperature}')
    scaled = ops.div(logits_row, temperature)
    if excluded:
        scaled = ops.add(scaled, Tensor(exclusion_offsets(excluded), dtype=logits_row.dtype))
    return ops.softmax(scaled, axis=-1)


class PolicyParams:
    """Learnable logits and raw magnitudes of an N x K policy.

    Attributes:
        logits: (N, K) operation logits, initialized to 0 (uniform selection).
        raw_magnitudes: (N, K) unconstrained magnitudes, initialized to 0 (range midpoints).
        temperature: Softmax temperature for operation selection.
        excluded_ops: Operations removed from the search space.
        blur_kernel_size: GaussianBlur kernel width used in blends.
    """

    def __init__(
        self,
        n_subpolicies: int = 5,
        temperature: float = 0.1,
        excluded_ops: Sequence[AugOpKind] = (),
        blur_kernel_size: int = 9,
        logits: Optional[np.ndarray] = None,
        raw_magnitudes: Optional[np.ndarray] = None,
    ):
        """Create policy parameters, zero-initialized unless arrays are given."""
        shape = (n_subpolicies, NUM_OPS)
        self.logits = Tensor(np.zeros(shape) if logits is None else logits, requires_grad=True, name='logits')
        self.raw_magnitudes = Tensor(
            np.zeros(shape) if raw_magnitudes is None else raw_magnitudes,
            requires_grad=True,
            name='raw_magnitudes',
        )
        for tensor in (self.logits, self.raw_magnitudes):
            if tensor.shape != shape:
                raise AugmentationError(f'{tensor.name} must have shape {shape}, got {tensor.shape}')
        self.temperature = float(temperature)
        self.excluded_ops = list(excluded_ops)
        self.blur_kernel_size = blur_kernel_size

    @classmethod
    def from_config(cls, config: Any) -> 'PolicyParams':
        """Build from an ``AugmentConfig``."""
        return cls(
            n_subpolicies=config.n_subpolicies,
            temperature=config.policy_temperature,
            excluded_ops=config.excluded_ops,
            blur_kernel_size=config.blur_kernel_size,
        )

    @property
    def n_subpolicies(self) -> int:
        return self.logits.shape[0]

    def parameters(self) -> List[Tensor]:
        return [self.logits, self.raw_magnitudes]

    def weights(self) -> Tensor:
        """(N, K) blend weights."""
        return blend_weights(self.logits, self.temperature, self.excluded_ops)

    def magnitudes(self) -> Tensor:
        """(N, K) magnitudes mapped into their ranges."""
        return map_magnitudes(self.raw_magnitudes)

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {'logits': self.logits.data.copy(), 'raw_magnitudes': self.raw_magnitudes.data.copy()}

    def metadata(self) -> Dict[str, Any]:
        return {
            'temperature': self.temperature,
            'excluded_ops': [k.value for k in self.excluded_ops],
            'blur_kernel_size': self.blur_kernel_size,
        }

    @classmethod
    def from_state(cls, state: Dict[str, np.ndarray], metadata: Dict[str, Any]) -> 'PolicyParams':
        logits = np.asarray(state['logits'])
        return cls(
            n_subpolicies=logits.shape[0],
            temperature=metadata['temperature'],
            excluded_ops=[AugOpKind(k) for k in metadata.get('excluded_ops', [])],
            blur_kernel_size=metadata.get('blur_kernel_size', 9),
            logits=logits,
            raw_magnitudes=np.asarray(state['raw_magnitudes']),
        )

    def snapshot(self) -> Dict[str, Any]:
        """Plain-data copy of the parameters for error diagnostics."""
        return {
            'logits': self.logits.data.tolist(),
            'raw_magnitudes': self.raw_magnitudes.data.tolist(),
            **self.metadata(),
        }


def subpolicy_forward(
    images: Tensor,
    logits_row: Tensor,
    magnitudes_row: Tensor,
    temperature: float,
    index: int = 0,
    excluded_ops: Sequence[AugOpKind] = (),
    blur_kernel_size: int = 9,
) -> Tensor:
    """Blend all operations with softmax weights (search mode).

    Args:
        images: NCHW batch in [0, 1].
        logits_row: (K,) operation logits.
        magnitudes_row: (K,) magnitudes already mapped into range.
        temperature: Softmax temperature.
        index: Sub-policy index, used in error messages.
        excluded_ops: Operations whose weight is forced to zero.
        blur_kernel_size: GaussianBlur kernel width.

    Returns:
        Tensor: ``sum_k w_k * apply_aug(images, k, m_k)`` clamped to [0, 1].

    Raises:
        AugmentationError: If the logits contain NaN.
    """
    if np.isnan(logits_row.data).any():
        raise AugmentationError(f'Sub-policy {index}: NaN in operation logits')
    weights = blend_weights(logits_row, temperature, excluded_ops)
    blended: Optional[Tensor] = None
    for k, kind in enumerate(OP_ORDER):
        if kind in excluded_ops:
            continue
        augmented = apply_aug(images, kind, magnitudes_row[k], blur_kernel_size)
        term = ops.mul(weights[k], augmented)
        blended = term if blended is None else ops.add(blended, term)
    return ops.clamp(blended, 0.0, 1.0)


def policy_forward_search(images: Tensor, params: PolicyParams) -> Tensor:
    """Compose the N sub-policy blends in index order."""
    magnitudes = params.magnitudes()
    out = images
    for n in range(params.n_subpolicies):
        out = subpolicy_forward(
            out,
            params.logits[n],
            magnitudes[n],
            params.temperature,
            index=n,
            excluded_ops=params.excluded_ops,
            blur_kernel_size=params.blur_kernel_size,
        )
    return out


def finalize_policy(params: PolicyParams, mode: Union[SamplingMode, str] = SamplingMode.CATEGORICAL) -> DeployedPolicy:
    """Freeze learned parameters into a deployable policy.

    Categorical mode keeps every operation with non-zero probability; argmax mode keeps the
    single most probable operation per sub-policy (lowest operation index on ties).
    """
    mode = SamplingMode(mode)
    with no_grad():
        probs = params.weights().data.astype(np.float64)
        magnitudes = params.magnitudes().data.astype(np.float64)
    subpolicies = []
    for n in range(params.n_subpolicies):
        if mode == SamplingMode.ARGMAX:
            chosen = [int(np.argmax(probs[n]))]
            row_probs = {chosen[0]: 1.0}
        else:
            chosen = [k for k in range(NUM_OPS) if probs[n, k] > 0]
            row_probs = {k: float(probs[n, k]) for k in chosen}
        entries = []
        for k in chosen:
            kind = OP_ORDER[k]
            magnitude = None if _NO_MAGNITUDE[k] else float(magnitudes[n, k])
            entries.append(PolicyOp(kind=kind, prob=min(row_probs[k], 1.0), magnitude=magnitude))
        subpolicies.append(SubPolicy(ops=entries))
    policy = DeployedPolicy(mode=mode, subpolicies=subpolicies)
    logger.info(f'Finalized {params.n_subpolicies} sub-policies in {mode.value} mode')
    return policy


def _choices(sub: SubPolicy, mode: SamplingMode):
    entries: List[Optional[PolicyOp]] = list(sub.ops)
    probs = [op.prob for op in sub.ops]
    if mode == SamplingMode.ARGMAX:
        best = int(np.argmax(probs))
        if sub.residual > probs[best]:
            return [None], np.array([1.0])
        return [entries[best]], np.array([1.0])
    if sub.residual > 0:
        entries.append(None)
        probs.append(sub.residual)
    p = np.asarray(probs, dtype=np.float64)
    return entries, p / p.sum()


def sample_ops(policy: DeployedPolicy, n_images: int, rng: np.random.Generator) -> List[List[Optional[PolicyOp]]]:
    """Draw one operation per (sub-policy, image); None stands for Identical residual mass."""
    draws = []
    for sub in policy.subpolicies:
        entries, p = _choices(sub, policy.mode)
        picks = rng.choice(len(entries), size=n_images, p=p)
        draws.append([entries[i] for i in picks])
    return draws


def _magnitude(op: PolicyOp, rng: np.random.Generator) -> Optional[float]:
    if op.magnitude_high is not None:
        return float(rng.uniform(op.magnitude, op.magnitude_high))
    return op.magnitude


def apply_deployed(
    images: Union[Tensor, np.ndarray],
    policy: DeployedPolicy,
    rng: np.random.Generator,
    blur_kernel_size: int = 9,
) -> Tensor:
    """Apply a deployed policy image-wise, sub-policies in index order.

    Images that drew the same fixed-magnitude operation are augmented together; interval
    magnitudes are sampled per image.
    """
    x = images if isinstance(images, Tensor) else Tensor(images)
    data = x.data.copy()
    n_images = data.shape[0]
    with no_grad():
        for sub_draws in sample_ops(policy, n_images, rng):
            groups: Dict[Any, List[int]] = {}
            for i, op in enumerate(sub_draws):
                if op is None or op.kind == AugOpKind.IDENTICAL:
                    continue
                key = (op.kind, op.magnitude) if op.magnitude_high is None else (id(op), i)
                groups.setdefault(key, []).append(i)
            for idx in groups.values():
                op = sub_draws[idx[0]]
                magnitude = _magnitude(op, rng)
                batch = Tensor(data[idx], dtype=data.dtype)
                data[idx] = apply_aug(batch, op.kind, 0.0 if magnitude is None else magnitude, blur_kernel_size, rng).data
    return Tensor(data, dtype=data.dtype)


def policy_to_dict(policy: DeployedPolicy) -> Dict[str, Any]:
    """JSON-ready dict of a policy, unset fields dropped."""
    return policy.model_dump(mode='json', exclude_none=True)


def policy_to_json(policy: DeployedPolicy) -> str:
    """Serialize with the stable key order version, mode, subpolicies / kind, prob, magnitude."""
    return json.dumps(policy_to_dict(policy), indent=2, ensure_ascii=False) + '\n'


def parse_policy(text: str) -> DeployedPolicy:
    """Parse policy JSON.

    Raises:
        PolicyFormatError: If the document is not valid JSON or violates the schema.
    """
    try:
        raw = json.loads(text)
        return DeployedPolicy.model_validate(raw)
    except (json.JSONDecodeError, ValidationError) as e:
        logger.warning(f'Rejected policy document: {str(e)}')
        raise PolicyFormatError(f'Invalid policy document: {str(e)}') from e


def save_policy(policy: DeployedPolicy, path: Union[str, Path]) -> Path:
    """Write a policy document, creating parent directories."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(policy_to_json(policy), encoding='utf-8')
    return path


def load_policy(path: Union[str, Path]) -> DeployedPolicy:
    """Read and validate a policy JSON file."""
    path = Path(path)
    if not path.is_file():
        raise PolicyFormatError(f'Policy file not found: {path}')
    return parse_policy(path.read_text(encoding='utf-8'))
