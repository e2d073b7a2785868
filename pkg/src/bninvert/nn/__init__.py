"""Layers, models and optimizers built on the bninvert tensor engine."""
