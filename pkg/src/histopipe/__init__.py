"""Slide-to-report pipeline for H&E histopathology classification."""

__version__ = "0.1.0"
