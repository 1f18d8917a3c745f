"""Positive and invariant tensor decompositions on weighted simplicial complexes."""

__version__ = "0.1.0"
