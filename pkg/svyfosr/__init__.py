"""Survey-aware function-on-scalar regression with replicate-based inference."""

__version__ = "0.1.0"
