"""Retinal-wave simulation and labelled image dataset generation."""

__version__ = "0.1.0"
