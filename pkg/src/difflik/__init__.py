"""Closed-form asymptotic expansions of diffusion transition densities and
approximate maximum-likelihood estimation from discretely sampled paths."""

__version__ = "0.1.0"
