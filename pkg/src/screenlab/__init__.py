"""Screening-policy analytics for candidates evaluated by noisy tests."""

__version__ = "0.1.0"
