"""Operator-algebraic diagnostics for Bose-Einstein condensation on graphs."""

__version__ = "0.1.0"
