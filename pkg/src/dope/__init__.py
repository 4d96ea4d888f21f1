"""Covariate-adjusted estimation of treatment-specific means and contrasts."""

__version__ = "0.1.0"
