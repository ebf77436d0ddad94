"""Personalized BCG bladder-cancer treatment model: simulation, fitting, analysis."""

__version__ = "0.1.0"
