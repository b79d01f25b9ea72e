"""Matchgate classical shadows: sampling, simulation, and Pfaffian post-processing."""

__version__ = "0.1.0"
