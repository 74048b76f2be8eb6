"""Rigid head pose and quaternion helpers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..diffcore import engine


@dataclass
class HeadPose:
    R: np.ndarray  # 3x3, world orientation of the head
    T: np.ndarray  # 3-vector translation

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=np.float64)
        self.T = np.asarray(self.T, dtype=np.float64).reshape(3)
        if np.abs(self.R @ self.R.T - np.eye(3)).max() > 1e-6:
            raise ValueError("pose rotation not orthonormal")
        if np.linalg.det(self.R) < 0.0:
            raise ValueError("pose rotation must be proper (det +1)")

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    def compose(self, other: "HeadPose") -> "HeadPose":
        """self after other: x -> self.R (other.R x + other.T) + self.T."""
        return HeadPose(self.R @ other.R, self.R @ other.T + self.T)

    def quat(self) -> np.ndarray:
        return rot_to_quat(self.R)

    def inverse(self) -> "HeadPose":
        return HeadPose(self.R.T, -self.R.T @ self.T)

    def to_dict(self):
        return {"R": self.R.tolist(), "T": self.T.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["R"]), np.array(d["T"]))


def rot_to_quat(R) -> np.ndarray:
    """Rotation matrix to unit quaternion (w, x, y, z), w >= 0."""
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(R[i, i] - R[j, j] - R[k, k] + 1.0) * 2.0
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def quat_mul_arrays(r, s):
    """Hamilton product of quaternion arrays, broadcasting (…,4)x(…,4)."""
    w1, x1, y1, z1 = np.moveaxis(np.asarray(r, dtype=np.float64), -1, 0)
    w2, x2, y2, z2 = np.moveaxis(np.asarray(s, dtype=np.float64), -1, 0)
    return np.stack([w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
                     w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
                     w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
                     w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2], axis=-1)


def quat_mul_const_left(qc, q_var):
    """Differentiable left-multiplication by a constant quaternion.

    ``qc`` is a plain (4,) array, ``q_var`` a Var of shape (N, 4).
    """
    w1, x1, y1, z1 = (float(v) for v in qc)
    w2 = q_var[:, 0:1]
    x2 = q_var[:, 1:2]
    y2 = q_var[:, 2:3]
    z2 = q_var[:, 3:4]
    return engine.concat([
        w2 * w1 - x2 * x1 - y2 * y1 - z2 * z1,
        x2 * w1 + w2 * x1 + z2 * y1 - y2 * z1,
        y2 * w1 - z2 * x1 + w2 * y1 + x2 * z1,
        z2 * w1 + y2 * x1 - x2 * y1 + w2 * z1,
    ], axis=1)


def to_world(x_can, q_can, pose: HeadPose):
    """Rigidly move canonical positions and rotations into world space."""
    if not isinstance(x_can, engine.Var):
        x_can = engine.constant(x_can)
    if not isinstance(q_can, engine.Var):
        q_can = engine.constant(q_can)
    x = engine.matmul(x_can, engine.constant(pose.R.T)) + engine.constant(pose.T)
    q = quat_mul_const_left(pose.quat(), q_can)
    return x, q


def apply_pose_points(points, pose: HeadPose):
    """Pose a differentiable (K, 3) point set (no rotations involved)."""
    if not isinstance(points, engine.Var):
        points = engine.constant(points)
    return engine.matmul(points, engine.constant(pose.R.T)) + engine.constant(pose.T)
