"""Microgrid generation game on a DC power-flow network."""

__version__ = "0.1.0"
