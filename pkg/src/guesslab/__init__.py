"""Decoding-strategy laboratory for a synthetic referential guessing game."""

__version__ = "0.1.0"
