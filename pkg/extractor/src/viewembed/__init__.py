"""Lecture-video view cropping and embedding extraction."""

__version__ = "0.1.0"
