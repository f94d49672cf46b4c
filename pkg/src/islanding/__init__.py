"""Islanding partition solver for radial distribution networks."""

__version__ = "0.1.0"
