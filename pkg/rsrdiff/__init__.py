"""Residual-shifting diffusion for few-step image super-resolution."""

__version__ = "0.1.0"
