"""Distilled per-qubit readout discriminators and a Q16.16 inference model."""

__version__ = "0.1.0"
