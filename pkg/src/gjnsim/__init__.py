"""Generalized Jackson network simulation and tightness-bound verification."""

__version__ = "0.1.0"
