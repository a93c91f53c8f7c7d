"""Lecture-analytics toolkit: datasets, detectors and evaluation for didactic features."""

__version__ = "0.1.0"
