"""Active domain adaptation with class-wise Gaussian Process sampling."""

__version__ = "0.1.0"
