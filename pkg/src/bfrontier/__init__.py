"""Breakdown frontiers for sensitivity analysis of treatment-effect conclusions."""

__version__ = "0.1.0"
