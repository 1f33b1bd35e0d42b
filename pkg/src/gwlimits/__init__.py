"""Galton-Watson limit theorems: exact oracles, streaming simulation and verification."""


__version__ = "0.1.0"
