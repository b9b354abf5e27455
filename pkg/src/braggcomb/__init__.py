"""Dirac-comb Bragg reflection toolkit."""
__version__ = "0.1.0"
