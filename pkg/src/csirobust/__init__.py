"""Adversarial robustness toolkit for CSI time-series classifiers."""

__version__ = "0.1.0"
