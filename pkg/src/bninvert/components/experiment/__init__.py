"""Experiments that chain the pipeline stages."""
