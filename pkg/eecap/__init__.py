"""Capacity bounds for two-way binary channels with energy exchange."""

__version__ = "0.1.0"
