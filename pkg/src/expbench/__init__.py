"""Deterministic 2D embodied-exploration simulator and benchmark harness."""

__version__ = "0.1.0"
