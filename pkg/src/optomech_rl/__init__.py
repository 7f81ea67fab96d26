"""Pulse-shaped preparation of nonclassical mechanical states in ultrastrongly coupled optomechanics."""

__version__ = "0.1.0"
