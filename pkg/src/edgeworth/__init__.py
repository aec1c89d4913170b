"""Kinetic simulation of two-good markets traded by Edgeworth box rules."""

__version__ = "0.1.0"
