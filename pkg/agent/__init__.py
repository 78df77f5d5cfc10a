"""Kernels, kernel ridge regression, adaptive covers and value-iteration agents."""
