"""Staged text-to-video GAN with frame-doubling growth steps."""

__version__ = "0.1.0"
