"""Bayesian Mallows mixture recommendations from click data, with an ALS baseline."""
__version__ = "0.1.0"
