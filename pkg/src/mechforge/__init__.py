"""Compile planar mechanism descriptions into printable parts and production plans."""

__version__ = "0.1.0"
