"""Transformer-guided SAC for minimum-energy tilt-wing eVTOL takeoff."""

__version__ = "0.1.0"
