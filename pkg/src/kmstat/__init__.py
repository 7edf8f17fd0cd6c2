"""Kaplan-Meier U- and V-statistics for right-censored data."""

__version__ = "0.1.0"
