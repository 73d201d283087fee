"""Fairness-constrained AutoML with adaptive unfairness mitigation."""

__version__ = "0.1.0"
