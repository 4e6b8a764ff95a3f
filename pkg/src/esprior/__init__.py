"""Bayesian inference for overparameterized GLMs with the effective-spectral prior."""

__version__ = "0.1.0"
