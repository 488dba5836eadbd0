"""Online stochastic resource allocation."""

__version__ = "0.1.0"
