"""Decoding speech spectrograms from ECoG high-gamma envelopes with causal convolutional models."""

__version__ = "0.1.0"
