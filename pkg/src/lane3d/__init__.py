"""Geometry, anchor encoding, loss, synthetic scenes and evaluation for 3D lane detection."""

__version__ = "0.1.0"
