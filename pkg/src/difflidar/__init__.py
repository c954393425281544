"""Differentiable simulation of a planar continuous-wave LIDAR."""

__version__ = "0.1.0"
