"""Decay-preserving normal forms and Sternberg linearizations of lattice maps."""

__version__ = "0.1.0"
