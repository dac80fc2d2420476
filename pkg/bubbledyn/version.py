"""Package declaring learned soft-membrane dynamics for manipulation."""
__version__ = "0.3.0-dev.1"
