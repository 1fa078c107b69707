"""Session dropout prediction toolkit."""

__version__ = "0.1.0"
