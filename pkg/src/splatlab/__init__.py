"""2D Gaussian splatting optimizer lab."""

__version__ = "0.1.0"
