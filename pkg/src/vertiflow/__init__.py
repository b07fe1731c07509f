"""Air-ground mobility simulator with heuristic and learned vertiport selection."""

__version__ = "0.1.0"
