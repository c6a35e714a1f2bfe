"""Multimodal tensor fusion with per-modality Tucker compression."""
from .kernels import BACKEND

__version__ = "0.1.0"
