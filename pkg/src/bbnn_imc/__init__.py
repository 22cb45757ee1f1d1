"""Sparsity-aware Bayesian binary neural network inference on PCM crossbars."""

__version__ = "0.1.0"
