"""Distributed privacy-preserving prediction: noisy teacher votes summed under threshold Paillier."""

__version__ = "0.1.0"
