"""Trajectory optimization with denoising-autoencoder regularization for model-based RL."""

__version__ = "0.1.0"
