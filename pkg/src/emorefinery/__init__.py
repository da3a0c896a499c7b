"""Segment-level speech emotion classification with emotion-profile refinement."""

__version__ = "0.1.0"
