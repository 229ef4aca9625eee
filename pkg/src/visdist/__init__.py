"""Distantly supervised scene graph relation labels and their EM denoising."""

__version__ = "0.1.0"
