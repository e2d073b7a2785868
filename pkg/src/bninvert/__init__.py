"""Synthetic dataset generation by matching BatchNorm statistics of a pre-trained model."""

__version__ = "0.1.0"
