"""Geometry, data generation, rewards and evaluation for spatial referring."""

__version__ = "0.1.0"
