"""Kernel Stein discrepancy goodness-of-fit tests for right-censored survival data."""

__version__ = "0.1.0"
