"""Autoregressive video-to-audio generation on a synthetic audio-visual world."""

__version__ = "0.1.0"
