"""Plain-text rendering of deployed policies.

Each sub-policy becomes one row listing its operations by decreasing probability with their
strengths: fixed magnitudes with two decimals, intervals as ``[low, high]`` and ``N/A`` for
operations without a magnitude.
"""

import re
from typing import List

from pydantic import ValidationError

from dimaug.exceptions import PolicyFormatError
from dimaug.models import AugOpKind, DeployedPolicy, PolicyOp, SamplingMode, SubPolicy


class PolicyTableRenderer:
    """Render a DeployedPolicy as an aligned ASCII table."""

    HEADERS = ('', 'Augmentations', 'Strengths')

    def __init__(self, row_label: str = 'Operation No.'):
        """Initialize with the prefix used for row labels."""
        self.row_label = row_label

    @staticmethod
    def format_op(op: PolicyOp) -> str:
        return f'{op.kind.value} ({op.prob * 100:.0f}%)'

    @staticmethod
    def format_strength(op: PolicyOp) -> str:
        if op.magnitude is None:
            return 'N/A'
        if op.magnitude_high is not None:
            return f'[{op.magnitude:.2f}, {op.magnitude_high:.2f}]'
        return f'{op.magnitude:.2f}'

    def rows(self, policy: DeployedPolicy) -> List[List[str]]:
        """Label, augmentation and strength cells for every sub-policy."""
        return [self._row(i, sub) for i, sub in enumerate(policy.subpolicies)]

    def _row(self, index: int, sub: SubPolicy) -> List[str]:
        ops = sorted(sub.ops, key=lambda op: -op.prob)
        return [
            f'{self.row_label}{index + 1}',
            ', '.join(self.format_op(op) for op in ops),
            ', '.join(self.format_strength(op) for op in ops),
        ]

    def render(self, policy: DeployedPolicy) -> str:
        """Return the whole table, header and rule lines included."""
        table = [list(self.HEADERS)] + self.rows(policy)
        widths = [max(len(row[c]) for row in table) for c in range(len(self.HEADERS))]

        def line(cells: List[str]) -> str:
            return ' | '.join(cell.ljust(width) for cell, width in zip(cells, widths)).rstrip()

        rule = '-+-'.join('-' * width for width in widths)
        body = [line(row) for row in table[1:]]
        footer = f'mode: {policy.mode.value}, {len(policy.subpolicies)} sub-policies'
        return '\n'.join([line(table[0]), rule, *body, rule, footer]) + '\n'


def render_policy(policy: DeployedPolicy) -> str:
    """Render with the default row labels."""
    return PolicyTableRenderer().render(policy)


_OP_PATTERN = re.compile(r'(\w+) \((\d+)%\)')
_STRENGTH_PATTERN = re.compile(r'\[(-?\d+\.\d+), (-?\d+\.\d+)\]|(-?\d+\.\d+)|N/A')


def _entry(kind: str, percent: str, strength: re.Match) -> PolicyOp:
    low, high, fixed = strength.groups()
    magnitude = float(low) if low is not None else (float(fixed) if fixed is not None else None)
    return PolicyOp(
        kind=AugOpKind(kind),
        prob=int(percent) / 100,
        magnitude=magnitude,
        magnitude_high=float(high) if high is not None else None,
    )


def parse_table(text: str) -> DeployedPolicy:
    """Rebuild a policy from ``render`` output, to the printed precision.

    Raises:
        PolicyFormatError: If a row cannot be read back.
    """
    lines = text.strip().splitlines()
    mode = SamplingMode.CATEGORICAL
    subpolicies = []
    for raw in lines[2:]:
        if raw.startswith('mode: '):
            mode = SamplingMode(raw[len('mode: ') :].split(',')[0])
            continue
        cells = [cell.strip() for cell in raw.split(' | ')]
        if len(cells) != 3:
            continue
        ops = _OP_PATTERN.findall(cells[1])
        strengths = list(_STRENGTH_PATTERN.finditer(cells[2]))
        if not ops or len(ops) != len(strengths):
            raise PolicyFormatError(f'Cannot parse policy row: {raw!r}')
        try:
            subpolicies.append(SubPolicy(ops=[_entry(kind, percent, s) for (kind, percent), s in zip(ops, strengths)]))
        except (ValidationError, ValueError) as e:
            raise PolicyFormatError(f'Invalid policy row {raw!r}: {e}') from e
    if not subpolicies:
        raise PolicyFormatError('No policy rows found')
    return DeployedPolicy(mode=mode, subpolicies=subpolicies)
