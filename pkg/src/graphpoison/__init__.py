"""Reinforcement-learning poisoning attacks on a synthetic graph-classification GNN."""

__version__ = "0.1.0"
