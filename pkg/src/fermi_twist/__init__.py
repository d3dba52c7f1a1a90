"""Numerical laboratory for area-preserving twist maps of Fermi-acceleration type."""

__version__ = "0.1.0"
