"""Multi-identity conditioned radiance fields on procedural dynamic scenes."""

__version__ = "0.1.0"
