"""Optimize Gaussian noise until its activation statistics match recorded BN statistics."""
