"""Multitask Bayesian network structure discovery with transfer priors."""
__version__ = "0.1.0"
