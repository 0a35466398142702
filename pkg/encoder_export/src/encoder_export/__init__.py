"""Offline export of frozen encoder embeddings into the MEF1 container."""

__version__ = "0.1.0"
