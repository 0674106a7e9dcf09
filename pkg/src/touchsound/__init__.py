"""Acoustic touch-type recognition: preprocessing, spectrograms, features, CNN, evaluation."""

__version__ = "0.1.0"
