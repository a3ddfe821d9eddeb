"""Phoneme-level deepfake speech detection."""

__version__ = "0.1.0"
