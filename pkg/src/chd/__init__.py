"""Cahn-Hilliard-Darcy tumour-growth simulator with a structural verification suite."""

__version__ = "0.1.0"
