"""Sphere-graph mapping and exploration from sparse motion-parallax depth."""

__version__ = "0.1.0"
