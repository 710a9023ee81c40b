"""Procedural image-generation sidecar speaking the shared wire protocol."""

__version__ = "0.1.0"
