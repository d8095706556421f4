"""Magnetic-fingerprint localisation of rail vehicles along a 1-D track."""

__version__ = "0.1.0"
