"""Sparse-view fan-beam CT reconstruction with dual-domain networks and a Swin head."""

__version__ = "0.1.0"
