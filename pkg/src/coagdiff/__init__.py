"""Coupled coagulation-diffusion simulation toolkit."""

__version__ = "0.1.0"
