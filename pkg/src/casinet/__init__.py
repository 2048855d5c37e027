"""Multi-scale fusion with contextual scale interaction and scale adaptation."""

__version__ = "0.1.0"
