"""Multi-view video-to-video rectified flow on synthetic scenes."""

__version__ = "0.1.0"
