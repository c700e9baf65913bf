"""
LatentForge

Rotation- and translation-invariant variational autoencoders built on a small
numpy autodiff engine, with synthetic benchmark datasets, latent-space
analysis and lattice ring perception.
"""

__version__ = "1.0.0"
