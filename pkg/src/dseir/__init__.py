"""Sequential Bayesian inference for time-discretised stochastic epidemic models."""

__version__ = "0.1.0"
