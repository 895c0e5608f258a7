"""Motion-prior pose tracking and ensemble pose estimation at desk scale."""

__version__ = "0.1.0"
