"""Lie point symmetries, Noether laws and order reduction for FRW cosmology."""

__version__ = "0.1.0"
