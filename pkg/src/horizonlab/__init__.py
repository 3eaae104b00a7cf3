"""Desk-scale laboratory for long-horizon policy-gradient training on puzzles."""

__version__ = "0.1.0"
