"""Blast dosimetry and physiological change scoring."""

__version__ = "0.1.0"
