"""Method-level service decomposition from execution traces."""

__version__ = "0.1.0"
