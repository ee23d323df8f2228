"""Desk-scale GenTron: text-to-image and text-to-video diffusion transformers."""

__version__ = "0.1.0"
