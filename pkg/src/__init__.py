"""Geolab - geodesic integral geometry experiments on the unit disk."""

__version__ = "0.1.0"
