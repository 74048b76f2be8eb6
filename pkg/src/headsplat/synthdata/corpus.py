"""Multi-view corpus generation and loading.

Directory layout:
    out/
      manifest.json
      img/{id:02d}_{exp:02d}_{view:02d}.png
      mask/{id:02d}_{exp:02d}_{view:02d}.png

The manifest records every ground-truth quantity (factors, cameras, head
poses, world-space landmarks) as plain JSON arrays, so any view can be
re-rendered bit-exactly from the manifest alone. Expression factor sets are
shared across identities (expression e means the same face action for
everyone); identity factors are constant across an identity's samples.
"""

import json
import os

import numpy as np

from ..morphcore import HeadPose
from ..splatcore import Camera, camera_ring, load_png, rasterize, save_png
from .scene import (
    LANDMARK_NAMES,
    SceneFactors,
    build_scene,
    neutral_expression,
    sample_expression,
    sample_identity,
)

CORPUS_FORMAT = "headsplat-corpus-v1"

CAMERA_RADIUS = 2.3
CAMERA_FOV_DEG = 40.0
ELEVATION_JITTER = 0.35
POSE_MAX_ANGLE = 0.2
POSE_MAX_SHIFT = 0.04


def _rotation_about(axis, angle):
    axis = axis / np.linalg.norm(axis)
    k = np.array([[0, -axis[2], axis[1]],
                  [axis[2], 0, -axis[0]],
                  [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * k @ k


def _sample_pose(rng):
    axis = rng.normal(size=3)
    angle = rng.uniform(0.0, POSE_MAX_ANGLE)
    shift = rng.uniform(-POSE_MAX_SHIFT, POSE_MAX_SHIFT, size=3)
    return HeadPose(_rotation_about(axis, angle), shift)


def scene_to_world(scene, pose):
    """Apply a head pose to scene splats and landmarks (plain numpy)."""
    pos = scene.position @ pose.R.T + pose.T
    lmk = scene.landmarks @ pose.R.T + pose.T
    from ..morphcore import quat_mul_arrays
    quat = quat_mul_arrays(pose.quat()[None, :], scene.quat)
    return pos, quat, lmk


def render_view(scene, pose, camera):
    """Ground-truth render of a posed scene: RGB image and binary mask."""
    pos, quat, _ = scene_to_world(scene, pose)
    out = rasterize(pos, scene.color, scene.logscale, quat, scene.logit, camera)
    return out.values, (out.alpha > 0.5).astype(np.float64)


def generate_corpus(out_dir, seed=0, n_id=8, n_exp=5, n_views=12,
                    resolution=64, n_holdout=2):
    """Write a full multi-view corpus; returns the manifest dict."""
    rng = np.random.default_rng(seed)
    os.makedirs(os.path.join(out_dir, "img"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "mask"), exist_ok=True)

    identities = [sample_identity(rng) for _ in range(n_id + n_holdout)]
    expressions = [neutral_expression()]
    if n_exp > 1:
        expressions.append(sample_expression(rng, jaw_open_bias=True))
    while len(expressions) < n_exp:
        expressions.append(sample_expression(rng))

    manifest = {
        "format": CORPUS_FORMAT,
        "seed": seed, "n_id": n_id, "n_exp": n_exp, "n_views": n_views,
        "n_holdout": n_holdout, "resolution": resolution,
        "landmark_names": list(LANDMARK_NAMES),
        "identities": [{"index": i,
                        "split": "train" if i < n_id else "holdout",
                        "factors": f} for i, f in enumerate(identities)],
        "expressions": expressions,
        "samples": [],
    }

    for i, id_factors in enumerate(identities):
        split = "train" if i < n_id else "holdout"
        for e, exp_factors in enumerate(expressions):
            factors = SceneFactors.from_parts(id_factors, exp_factors)
            scene = build_scene(factors)
            pose = _sample_pose(rng)
            _, _, lmk_world = scene_to_world(scene, pose)
            heights = rng.uniform(-ELEVATION_JITTER, ELEVATION_JITTER,
                                  size=n_views)
            base_az = rng.uniform(0.0, 2.0 * np.pi / n_views)
            cams = camera_ring((0.0, 0.0, 0.0), CAMERA_RADIUS, n_views,
                               heights, CAMERA_FOV_DEG, resolution, base_az)
            for v, cam in enumerate(cams):
                img, mask = render_view(scene, pose, cam)
                name = f"{i:02d}_{e:02d}_{v:02d}.png"
                save_png(os.path.join(out_dir, "img", name), img)
                save_png(os.path.join(out_dir, "mask", name),
                         np.repeat(mask[:, :, None], 3, axis=2))
                manifest["samples"].append({
                    "id": i, "exp": e, "view": v, "split": split,
                    "img": f"img/{name}", "mask": f"mask/{name}",
                    "camera": cam.to_dict(), "pose": pose.to_dict(),
                    "landmarks": lmk_world.tolist(),
                })

    path = os.path.join(out_dir, "manifest.json")
    with open(path + ".tmp", "w") as f:
        json.dump(manifest, f, indent=1)
    os.replace(path + ".tmp", path)
    return manifest


def load_manifest(corpus_dir):
    with open(os.path.join(corpus_dir, "manifest.json")) as f:
        manifest = json.load(f)
    if manifest.get("format") != CORPUS_FORMAT:
        raise ValueError(f"{corpus_dir}: not a {CORPUS_FORMAT} manifest")
    return manifest


def samples_for(manifest, split="train"):
    return [s for s in manifest["samples"] if s["split"] == split]


def sample_factors(manifest, sample) -> SceneFactors:
    identity = manifest["identities"][sample["id"]]["factors"]
    expression = manifest["expressions"][sample["exp"]]
    return SceneFactors.from_parts(identity, expression)


def load_view(corpus_dir, sample):
    """Materialize one manifest row: images as floats, typed camera/pose."""
    img = load_png(os.path.join(corpus_dir, sample["img"]))
    mask = load_png(os.path.join(corpus_dir, sample["mask"]))[:, :, 0]
    return {
        "image": img,
        "mask": (mask > 0.5).astype(np.float64),
        "camera": Camera.from_dict(sample["camera"]),
        "pose": HeadPose.from_dict(sample["pose"]),
        "landmarks": np.array(sample["landmarks"]),
        "id": sample["id"], "exp": sample["exp"], "view": sample["view"],
    }
