"""Image file IO: 8-bit PNG previews, raw float32 feature maps."""

from __future__ import annotations

import json

import numpy as np
from PIL import Image


def save_png(path, rgb):
    """Clip (H, W, 3) floats in [0,1] to 8-bit PNG."""
    arr = np.clip(np.asarray(rgb), 0.0, 1.0)
    Image.fromarray((arr * 255.0 + 0.5).astype(np.uint8)).save(path)


def load_png(path):
    """PNG to (H, W, 3) float64 in [0,1]."""
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0


def save_feature_bin(path, arr):
    """Flat little-endian float32 blob, row-major, channel-last.

    Shape travels in a JSON sidecar at ``path + '.json'``.
    """
    arr = np.ascontiguousarray(arr, dtype="<f4")
    with open(path, "wb") as f:
        f.write(arr.tobytes())
    with open(path + ".json", "w") as f:
        json.dump({"shape": list(arr.shape), "dtype": "float32"}, f)


def load_feature_bin(path):
    with open(path + ".json") as f:
        meta = json.load(f)
    return np.fromfile(path, dtype="<f4").reshape(meta["shape"]).astype(np.float64)
