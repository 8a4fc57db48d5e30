"""Dual-domain CT metal artifact reduction with partial-convolution sinogram inpainting."""

__version__ = "0.1.0"
