"""Dimensionality-driven augmentation search.

This package learns photometric augmentation policies for contrastive pretraining by
maximizing the local intrinsic dimensionality of a frozen encoder's representations. It
provides a small tape-based autodiff engine, differentiable augmentation operations, LID
estimators, a contrastive trainer and the three-step search pipeline.
"""

__version__ = '0.1.0'
