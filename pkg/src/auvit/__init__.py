"""AU-aware Vision Transformer for facial expression recognition."""

__version__ = "0.1.0"
