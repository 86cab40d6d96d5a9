"""Fault maintenance tree analysis via CTMC semantics."""

__version__ = "0.1.0"
