"""Synthetic-data neural surrogates for microfluidic fiber fabrication."""

__version__ = "0.1.0"
