"""Capacity-constrained treatment assignment with strategic, competing agents."""

__version__ = "0.1.0"
