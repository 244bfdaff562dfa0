"""Online least-squares prediction for marginally stable linear dynamical systems."""

__version__ = "0.1.0"
