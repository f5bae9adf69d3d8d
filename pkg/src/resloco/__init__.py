"""Planar humanoid loco-manipulation with two-stage residual learning."""

__version__ = "0.1.0"
