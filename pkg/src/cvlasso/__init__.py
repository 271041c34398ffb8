"""Lasso with K-fold CV penalty, perturbation bootstrap and limit-law simulation."""

__version__ = "0.1.0"
