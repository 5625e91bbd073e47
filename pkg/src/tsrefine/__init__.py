"""Action recognition from single timestamps with refined sampling distributions."""

__version__ = "0.1.0"
