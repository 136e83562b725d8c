"""Desk-scale multilingual zero-shot TTS pipeline."""

__version__ = "0.1.0"
