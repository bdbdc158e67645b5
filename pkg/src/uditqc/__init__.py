"""Diffusion-transformer synthesis of quantum circuits."""

__version__ = "0.1.0"
