"""Koopman-style latent models with state-dependent spectra, trained from scratch in numpy, and MPC on top of them."""

__version__ = "0.1.0"
