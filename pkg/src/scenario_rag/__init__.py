"""Structure-aware driving-scenario retrieval."""

__version__ = "0.1.0"
