"""Matplotlib figures for policies and training curves (written to files, Agg backend)."""

from pathlib import Path
from typing import List, Optional, Union

import matplotlib


matplotlib.use('Agg')

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
from loguru import logger  # noqa: E402

from dimaug.models import OP_ORDER, AugOpKind, DeployedPolicy  # noqa: E402


def policy_columns(policy: DeployedPolicy) -> List[AugOpKind]:
    """Search-space operations followed by any deploy-only operation the policy uses."""
    used = {op.kind for sub in policy.subpolicies for op in sub.ops}
    return OP_ORDER + [kind for kind in AugOpKind if kind not in OP_ORDER and kind in used]


def policy_matrix(policy: DeployedPolicy) -> np.ndarray:
    """(sub-policies, operations) probability matrix; residual mass is added to Identical.

    Columns follow :func:`policy_columns`.
    """
    columns = policy_columns(policy)
    matrix = np.zeros((len(policy.subpolicies), len(columns)))
    for n, sub in enumerate(policy.subpolicies):
        for op in sub.ops:
            matrix[n, columns.index(op.kind)] += op.prob
        matrix[n, 0] += sub.residual
    return matrix


def plot_policy_heatmap(
    policy: DeployedPolicy,
    path: Union[str, Path],
    title: Optional[str] = None,
) -> Path:
    """Save a sub-policy x operation probability heat map.

    Args:
        policy: Deployed policy to plot.
        path: Output image path (format from the suffix).
        title: Optional figure title.

    Returns:
        Path: The written file.
    """
    path = Path(path)
    matrix = policy_matrix(policy)
    columns = policy_columns(policy)
    fig, ax = plt.subplots(figsize=(1.0 + 0.8 * len(columns), 1.2 + 0.6 * len(matrix)))
    try:
        image = ax.imshow(matrix, cmap='viridis', vmin=0.0, vmax=1.0, aspect='auto')
        ax.set_xticks(range(len(columns)), [kind.value for kind in columns], rotation=45, ha='right')
        ax.set_yticks(range(len(matrix)), [f'No.{n + 1}' for n in range(len(matrix))])
        for (n, k), value in np.ndenumerate(matrix):
            if value >= 0.005:
                ax.text(k, n, f'{value * 100:.0f}%', ha='center', va='center', color='w' if value < 0.6 else 'k')
        fig.colorbar(image, ax=ax, label='probability')
        ax.set_title(title or f'Policy ({policy.mode.value})')
        fig.tight_layout()
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, dpi=120)
    finally:
        plt.close(fig)
    logger.info(f'Saved policy heat map to {path}')
    return path


def plot_loss_curves(metrics: pd.DataFrame, path: Union[str, Path], metric: str = 'loss') -> Path:
    """Plot one line per stage of a metric from a metrics DataFrame."""
    path = Path(path)
    rows = metrics[metrics['metric'] == metric]
    fig, ax = plt.subplots(figsize=(6, 4))
    try:
        for stage, group in rows.groupby('stage', sort=False):
            ax.plot(group['epoch'], group['value'], marker='o', label=stage)
        ax.set_xlabel('epoch')
        ax.set_ylabel(metric)
        if len(rows):
            ax.legend()
        fig.tight_layout()
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, dpi=120)
    finally:
        plt.close(fig)
    logger.info(f'Saved {metric} curves to {path}')
    return path
