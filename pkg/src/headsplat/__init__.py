"""Parametric Gaussian-splat head model on a synthetic multi-view corpus."""

__version__ = "0.1.0"
