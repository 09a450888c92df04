"""Prequential-coding measures of the information held by trained models."""

__version__ = "0.1.0"
