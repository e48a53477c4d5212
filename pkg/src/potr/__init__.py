"""POTR: post-training compression for 3D Gaussian Splatting models."""

__version__ = "0.1.0"

from .config import EncodeConfig, config_from_q
from .pipeline import decode_pipeline, encode_pipeline
from .scene import Camera, Scene, Splats

__all__ = [
    "Camera", "EncodeConfig", "Scene", "Splats",
    "config_from_q", "decode_pipeline", "encode_pipeline",
]
