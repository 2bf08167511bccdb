"""Causally symmetric Bohmian guidance with two boundary wavefunctions."""

__version__ = "0.1.0"
