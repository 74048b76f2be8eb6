"""Pinhole camera with a world-to-camera rigid transform.

Conventions: camera looks down +z in camera space, y points down the image.
Pixel (row i, col j) has screen-space center (j + 0.5, i + 0.5); a camera
point (tx, ty, tz) lands at (fx*tx/tz + cx, fy*ty/tz + cy).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    R_wc: np.ndarray  # world-to-camera rotation, rows = camera axes
    t: np.ndarray     # camera-space translation: x_cam = R_wc x_world + t
    width: int
    height: int

    def __post_init__(self):
        self.R_wc = np.asarray(self.R_wc, dtype=np.float64)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if self.width < 8 or self.height < 8:
            raise ValueError("camera image must be at least 8x8 pixels")
        err = np.abs(self.R_wc @ self.R_wc.T - np.eye(3)).max()
        if err > 1e-6:
            raise ValueError(f"camera rotation not orthonormal (err {err:.3g})")

    def world_to_cam(self, points):
        return np.asarray(points, dtype=np.float64) @ self.R_wc.T + self.t

    def scaled(self, factor: float) -> "Camera":
        """Same view at ``factor`` times the resolution (intrinsics scale)."""
        w, h = round(self.width * factor), round(self.height * factor)
        return Camera(self.fx * factor, self.fy * factor,
                      self.cx * factor, self.cy * factor,
                      self.R_wc.copy(), self.t.copy(), w, h)

    def to_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "R_wc": self.R_wc.tolist(), "t": self.t.tolist(),
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d):
        return cls(d["fx"], d["fy"], d["cx"], d["cy"],
                   np.array(d["R_wc"]), np.array(d["t"]),
                   d["width"], d["height"])


def look_at(eye, target, up=(0.0, 1.0, 0.0)) -> np.ndarray:
    """World-to-camera rotation for a camera at ``eye`` looking at ``target``.

    ``up`` is the world direction that should point up in the image; the
    image y axis points down, so the middle row is cross(forward, right).
    """
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd = fwd / np.linalg.norm(fwd)
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(fwd, up)
    n = np.linalg.norm(right)
    if n < 1e-9:
        raise ValueError("up direction parallel to viewing direction")
    right /= n
    down = np.cross(fwd, right)
    return np.stack([right, down, fwd])


def camera_ring(target, radius, n_views, height_offsets, fov_deg, size,
                base_azimuth=0.0):
    """Evenly spaced azimuth ring of cameras looking at ``target``."""
    target = np.asarray(target, dtype=np.float64)
    f = 0.5 * size / np.tan(np.radians(fov_deg) / 2.0)
    cams = []
    for k in range(n_views):
        az = base_azimuth + 2.0 * np.pi * k / n_views
        eye = target + np.array([radius * np.sin(az),
                                 height_offsets[k % len(height_offsets)],
                                 radius * np.cos(az)])
        R = look_at(eye, target)
        t = -R @ eye
        cams.append(Camera(f, f, size / 2.0, size / 2.0, R, t, size, size))
    return cams
