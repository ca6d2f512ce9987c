"""Decentralized multi-agent Q-learning with value factorization and
periodic parameter sharing."""

__version__ = "0.1.0"
