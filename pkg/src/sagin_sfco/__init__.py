"""Service function chain orchestration over a time-varying space-air-ground network."""

__version__ = "0.1.0"
