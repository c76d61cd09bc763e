"""Unsupervised aspect and aspect-term co-extraction with convolutional multi-attention."""
from ._accel import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
