"""Convergence experiments for biased stochastic gradient descent and stochastic approximation."""

__version__ = "0.1.0"
