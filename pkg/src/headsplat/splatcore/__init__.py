"""Differentiable Gaussian splat rasterizer, cameras, image IO."""

from .camera import Camera, camera_ring, look_at
from .image_io import load_feature_bin, load_png, save_feature_bin, save_png
from .raster import (
    FeatureImage,
    oracle_rasterize,
    project_splats,
    quat_to_rot,
    rasterize,
    rasterize_backward,
    render,
)

__all__ = [
    "Camera", "camera_ring", "look_at",
    "FeatureImage", "project_splats", "quat_to_rot",
    "rasterize", "rasterize_backward", "oracle_rasterize", "render",
    "save_png", "load_png", "save_feature_bin", "load_feature_bin",
]
