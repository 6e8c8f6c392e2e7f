"""Closed-loop traffic flow generation with grouped joint-action search."""

__version__ = "0.1.0"
