"""Screening and analysis of scale-invariant responses in three-node enzymatic networks."""

__version__ = "0.1.0"
