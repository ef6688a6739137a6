"""Desk-scale masked video-text autoencoder with measurable reconstruction and retrieval."""

__version__ = "0.1.0"
