"""Exact gerrymander-polynomial enumeration and series analysis."""

__version__ = "0.1.0"
