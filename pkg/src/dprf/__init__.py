"""Differentially private random feature regression with fairness diagnostics."""

__version__ = "0.1.0"
