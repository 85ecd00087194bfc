"""Anchor-based nearest class mean losses (E-NCM and C-NCM) in numpy."""

__version__ = "0.1.0"
