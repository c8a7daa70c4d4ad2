"""Policy tables and figures."""

from dimaug.visualization.ascii_table import PolicyTableRenderer, parse_table, render_policy
from dimaug.visualization.plots import plot_loss_curves, plot_policy_heatmap, policy_columns, policy_matrix


__all__ = [
    'PolicyTableRenderer',
    'parse_table',
    'plot_loss_curves',
    'plot_policy_heatmap',
    'policy_columns',
    'policy_matrix',
    'render_policy',
]
