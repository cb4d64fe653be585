"""Bayesian estimation of time-course expression profiles under shape restrictions."""

__version__ = "0.1.0"
