"""Adaptive minimum-residual (DPG-type) finite elements for convection-diffusion."""
__version__ = "0.1.0"
