"""Gather-trade-build economy with an arbitrary-return tax planner."""

__version__ = "0.1.0"
