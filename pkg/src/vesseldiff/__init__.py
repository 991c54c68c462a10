"""Diffusion-based multi-modal vessel trajectory forecasting from AIS tracks."""

__version__ = "0.1.0"
