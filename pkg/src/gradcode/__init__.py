"""Approximate gradient coding with fractional repetition codes."""

__version__ = "0.1.0"
