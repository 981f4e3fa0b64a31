"""Video anomaly detection with per-region restricted Boltzmann machines."""

__version__ = "0.1.0"
