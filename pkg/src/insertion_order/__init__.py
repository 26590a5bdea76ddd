"""Insertion Transformer trained toward soft, order-shaped oracle policies."""

__version__ = "0.1.0"
