"""Procedural, license-free stand-in for a private image dataset."""
