"""Parametric deformation of the mean Gaussian model, pose, upsampler."""

from .model import (
    ModelConfig,
    compute_attributes,
    compute_color,
    deform_canonical,
    gaussian_frame,
    init_attribute_net,
    init_mean_model,
    init_shared_nets,
    inject_identity,
    transform_landmarks,
)
from .transforms import (
    HeadPose,
    apply_pose_points,
    quat_mul_arrays,
    quat_mul_const_left,
    rot_to_quat,
    to_world,
)
from .upsampler import bypass_weights, init_upsampler, upsample

__all__ = [
    "ModelConfig", "init_shared_nets", "init_attribute_net", "init_mean_model",
    "inject_identity", "deform_canonical", "compute_color",
    "compute_attributes", "transform_landmarks", "gaussian_frame",
    "HeadPose", "rot_to_quat", "quat_mul_arrays", "quat_mul_const_left",
    "to_world", "apply_pose_points",
    "init_upsampler", "upsample", "bypass_weights",
]
