"""Test-driven reinforcement learning: returns learned from lexicographic test comparisons."""

__version__ = "0.1.0"
