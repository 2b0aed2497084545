"""Simulation lab for measurement error in predictive models."""

__version__ = "0.1.0"
