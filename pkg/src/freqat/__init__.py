"""Frequency-regularized adversarial training on a small from-scratch CNN."""

__version__ = "0.1.0"
