"""Desk-scale RL trainer for structured rating-prediction traces."""

__version__ = "0.1.0"
