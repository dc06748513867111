"""Coherent-one-way QKD: optics model, finite-key analysis and post-processing."""

__version__ = "0.1.0"
