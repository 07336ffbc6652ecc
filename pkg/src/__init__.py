"""Multiplex overlap and multilevel cooperation models for village survey data."""

__version__ = "0.1.0"
