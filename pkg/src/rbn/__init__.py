"""Chart-based inference for recursive Bayesian networks."""

__version__ = "0.1.0"
