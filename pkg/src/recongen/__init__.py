"""Data-free compression with searched reconstruction generators."""

__version__ = "0.1.0"
