"""Equivariant imaging: learning to invert linear operators from measurements alone."""

__version__ = "0.1.0"
