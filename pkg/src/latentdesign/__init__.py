"""Conditional generation of 3D voxel structures: SIMP data, multi-headed VAE and latent diffusion."""

__version__ = "0.1.0"
