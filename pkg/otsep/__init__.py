"""Joint ensemble separation and system identification from aggregate snapshots."""

__version__ = "0.1.0"
