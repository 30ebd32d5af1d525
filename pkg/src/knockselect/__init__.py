"""Unsupervised feature selection guided by knockoff pseudo labels and a deep-Q agent."""

__version__ = "0.1.0"
