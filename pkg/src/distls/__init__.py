"""Distributed proximal-gradient splitting with backtracking linesearch."""

__version__ = "0.1.0"
