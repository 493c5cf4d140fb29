"""Single-reference-view 6D object pose estimation."""

__version__ = "0.1.0"
