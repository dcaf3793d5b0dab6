"""Range-view projection of LiDAR scans with pluggable per-pixel point selection."""

__version__ = "0.1.0"
