"""Synthetic collaborative perception: channel latency model, BEV encoding,
collaborator selection, attention fusion and box evaluation."""

__version__ = "0.1.0"
