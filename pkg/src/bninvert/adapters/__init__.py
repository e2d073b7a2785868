"""Byte-level codecs for checkpoints, datasets, images and CSV logs."""
