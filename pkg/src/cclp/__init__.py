"""Compact clustering via label propagation: a graph-based regulariser for
semi-supervised learning, with the pieces needed to train and study it."""

__version__ = "0.1.0"
