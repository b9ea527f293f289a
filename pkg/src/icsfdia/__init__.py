"""Heuristic inference of mutable ICS protocol fields and false-data injection."""

__version__ = "0.1.0"
