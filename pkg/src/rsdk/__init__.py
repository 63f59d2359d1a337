"""Channel-boosted transformer set-prediction detector for radar-like images."""

__version__ = "0.1.0"
