"""Pseudo-labeling with memory-bank auxiliary classifiers for domain adaptation."""

__version__ = "0.1.0"
