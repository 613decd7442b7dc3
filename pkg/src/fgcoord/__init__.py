"""Coordination engine: factored joint values on sampled graphs, trained end to end."""

__version__ = "0.1.0"
