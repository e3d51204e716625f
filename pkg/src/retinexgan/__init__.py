"""Retinex-style decomposition-enhancement GAN toolkit for low-light
image enhancement: paired dataset synthesis, training, metrics and an
ablation harness."""

__version__ = "0.1.0"
