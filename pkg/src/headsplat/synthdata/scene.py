"""Procedural blob-head scenes with exact ground truth.

A scene is a splat cloud shaped like a stylized head plus 12 labeled 3D
landmarks. Identity factors control skull proportions, nose protrusion,
ear size, and base albedo; expression factors displace the jaw, mouth
corners, and brows by closed-form rules. Everything is a pure function of
the factors: the only randomness is an internal fixed-seed jitter pattern
shared by all scenes, so identical factors give bit-identical scenes.

Canonical frame: y up (crown +y, chin -y), z out of the face, x to the
head's right. The head fits well inside the unit box.
"""

from dataclasses import dataclass

import numpy as np

IDENTITY_RANGES = {
    "skull_x": (0.8, 1.2),
    "skull_y": (0.8, 1.2),
    "skull_z": (0.8, 1.2),
    "nose": (0.05, 0.18),
    "ear": (0.5, 1.5),
    "albedo_r": (0.25, 0.9),
    "albedo_g": (0.2, 0.8),
    "albedo_b": (0.15, 0.75),
}
EXPRESSION_RANGES = {
    "jaw": (0.0, 0.5),      # radians of jaw-open rotation
    "mouth": (-0.05, 0.05),  # mouth-corner offset, scene units
    "brow": (-0.03, 0.06),   # brow raise, scene units
}

LANDMARK_NAMES = (
    "eye_outer_l", "eye_inner_l", "eye_inner_r", "eye_outer_r",
    "nose_tip", "mouth_corner_l", "mouth_corner_r", "jaw",
    "brow_inner_l", "brow_outer_l", "brow_inner_r", "brow_outer_r",
)

REGIONS = ("shell", "nose", "eye_l", "eye_r", "mouth",
           "ear_l", "ear_r", "brow_l", "brow_r")

# base ellipsoid radii before skull scaling
_HEAD_RADII = np.array([0.42, 0.55, 0.46])

# jaw hinge and the soft region ramp (scaled by the skull below)
_JAW_HINGE = np.array([0.0, -0.05, -0.3])
_JAW_Y0, _JAW_RAMP = -0.1, 0.15

_N_SHELL, _N_NOSE, _N_EYE, _N_MOUTH, _N_EAR, _N_BROW = 1440, 90, 70, 150, 60, 60

# fixed jitter seed: scene variation comes from factors alone
_JITTER_SEED = 20240716


@dataclass
class SceneFactors:
    skull: tuple        # (sx, sy, sz)
    nose: float
    ear: float
    albedo: tuple       # (r, g, b)
    jaw: float = 0.0
    mouth: float = 0.0
    brow: float = 0.0

    def validate(self):
        vals = {"skull_x": self.skull[0], "skull_y": self.skull[1],
                "skull_z": self.skull[2], "nose": self.nose, "ear": self.ear,
                "albedo_r": self.albedo[0], "albedo_g": self.albedo[1],
                "albedo_b": self.albedo[2]}
        for key, v in vals.items():
            lo, hi = IDENTITY_RANGES[key]
            if not lo <= v <= hi:
                raise ValueError(f"identity factor {key}={v} outside [{lo}, {hi}]")
        for key in EXPRESSION_RANGES:
            lo, hi = EXPRESSION_RANGES[key]
            v = getattr(self, key)
            if not lo <= v <= hi:
                raise ValueError(f"expression factor {key}={v} outside [{lo}, {hi}]")
        return self

    def to_dict(self):
        return {"skull": list(self.skull), "nose": self.nose, "ear": self.ear,
                "albedo": list(self.albedo), "jaw": self.jaw,
                "mouth": self.mouth, "brow": self.brow}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["skull"]), d["nose"], d["ear"], tuple(d["albedo"]),
                   d.get("jaw", 0.0), d.get("mouth", 0.0), d.get("brow", 0.0))

    @classmethod
    def from_parts(cls, identity, expression):
        return cls(skull=(identity["skull_x"], identity["skull_y"],
                          identity["skull_z"]),
                   nose=identity["nose"], ear=identity["ear"],
                   albedo=(identity["albedo_r"], identity["albedo_g"],
                           identity["albedo_b"]),
                   **expression)


def sample_identity(rng):
    return {k: float(rng.uniform(*IDENTITY_RANGES[k])) for k in IDENTITY_RANGES}


def sample_expression(rng, jaw_open_bias=False):
    f = {k: float(rng.uniform(*EXPRESSION_RANGES[k])) for k in EXPRESSION_RANGES}
    if jaw_open_bias:
        f["jaw"] = float(rng.uniform(0.3, 0.5))
    return f


def neutral_expression():
    return {"jaw": 0.0, "mouth": 0.0, "brow": 0.0}


@dataclass
class Scene:
    position: np.ndarray   # (N, 3)
    color: np.ndarray      # (N, 3) linear RGB
    logscale: np.ndarray   # (N, 3)
    quat: np.ndarray       # (N, 4) identity rotations
    logit: np.ndarray      # (N,)
    region: np.ndarray     # (N,) index into REGIONS
    landmarks: np.ndarray  # (12, 3)

    @property
    def n_splats(self):
        return len(self.position)


def _fibonacci_sphere(n):
    i = np.arange(n) + 0.5
    y = 1.0 - 2.0 * i / n
    r = np.sqrt(1.0 - y * y)
    th = np.pi * (1 + 5 ** 0.5) * i
    return np.stack([r * np.cos(th), y, r * np.sin(th)], axis=1)


def build_scene(factors: SceneFactors) -> Scene:
    factors.validate()
    rng = np.random.default_rng(_JITTER_SEED)
    cx, cy, cz = _HEAD_RADII * np.asarray(factors.skull)
    sx, sy, sz = factors.skull
    albedo = np.asarray(factors.albedo)

    def z_surf(x, y):
        return cz * np.sqrt(np.maximum(1.0 - (x / cx) ** 2 - (y / cy) ** 2, 1e-9))

    parts = []  # (pos, color, scale, logit, region_idx, corner_pull)

    def add(pos, color, scale, logit, region, pull=None):
        n = len(pos)
        color = np.clip(np.broadcast_to(color, (n, 3)).copy(), 0.0, 1.0)
        jitter = np.exp(0.12 * (rng.uniform(size=n) - 0.5))
        pull = np.zeros(n) if pull is None else pull
        parts.append((pos, color, scale * jitter, np.full(n, logit),
                      np.full(n, REGIONS.index(region)), pull))

    # skull shell with vertical shading and mottle for photometric texture
    unit = _fibonacci_sphere(_N_SHELL)
    shell = unit * np.array([cx, cy, cz])
    shell *= 1.0 + 0.015 * (rng.uniform(size=(_N_SHELL, 1)) - 0.5)
    shade = 0.75 + 0.25 * (unit[:, 1:2] + 1.0) / 2.0
    mottle = 1.0 + 0.25 * (rng.uniform(size=(_N_SHELL, 1)) - 0.5)
    add(shell, albedo * shade * mottle, 0.030, 2.2, "shell")

    # nose ridge, pushed out of the face by the protrusion factor
    t = np.clip(np.linspace(0, 1, _N_NOSE) + 0.04 * (rng.uniform(size=_N_NOSE) - 0.5),
                0, 1)
    nx = 0.012 * rng.normal(size=_N_NOSE)
    ny = (0.12 - 0.26 * t) * sy
    nz = z_surf(nx, ny) + factors.nose * (0.25 + 0.75 * np.sin(np.pi * t))
    add(np.stack([nx, ny, nz], axis=1), np.clip(albedo * 1.06, 0, 1),
        0.016, 3.0, "nose")

    # eyes: dark clusters proud of the surface
    for sign, region in ((-1, "eye_l"), (1, "eye_r")):
        ec = np.array([sign * 0.16 * sx, 0.10 * sy, 0.0])
        ec[2] = z_surf(ec[0], ec[1]) + 0.01
        pts = ec + rng.normal(size=(_N_EYE, 3)) * np.array(
            [0.03 * sx, 0.018 * sy, 0.004])
        add(pts, np.array([0.06, 0.05, 0.05]), 0.014, 3.0, region)

    # mouth: horizontal band; corner pull weights drive the expression rule
    s = np.clip(np.linspace(-1, 1, _N_MOUTH)
                + 0.03 * (rng.uniform(size=_N_MOUTH) - 0.5), -1, 1)
    mx = s * 0.14 * sx
    my = -0.24 * sy + 0.012 * rng.normal(size=_N_MOUTH)
    mz = z_surf(mx, my) + 0.008
    pull = np.sign(s) * s ** 2
    add(np.stack([mx, my, mz], axis=1), np.array([0.45, 0.15, 0.15]),
        0.015, 3.0, "mouth", pull=pull)

    # ears: side clusters whose extent and splat size grow with the factor
    for sign, region in ((-1, "ear_l"), (1, "ear_r")):
        ec = np.array([sign * cx * 0.98, 0.02 * sy, -0.02 * sz])
        pts = ec + rng.normal(size=(_N_EAR, 3)) * np.array(
            [0.008, 0.05 * factors.ear * sy, 0.035 * factors.ear * sz])
        add(pts, albedo * 0.92, 0.02 * (0.7 + 0.6 * factors.ear), 3.0, region)

    # brows: short dark arcs above the eyes
    for sign, region in ((-1, "brow_l"), (1, "brow_r")):
        bx = sign * (0.07 + 0.18 * rng.uniform(size=_N_BROW)) * sx
        by = 0.245 * sy + 0.008 * rng.normal(size=_N_BROW)
        bz = z_surf(bx, by) + 0.006
        add(np.stack([bx, by, bz], axis=1), np.array([0.15, 0.10, 0.08]),
            0.012, 3.0, region)

    pos = np.concatenate([p[0] for p in parts])
    col = np.concatenate([p[1] for p in parts])
    scale = np.concatenate([p[2] for p in parts])
    logit = np.concatenate([p[3] for p in parts])
    region = np.concatenate([p[4] for p in parts]).astype(np.int64)
    pull = np.concatenate([p[5] for p in parts])

    lmk = _neutral_landmarks(factors, z_surf)
    pos, lmk = _apply_expression(factors, pos, region, pull, lmk)

    n = len(pos)
    quat = np.zeros((n, 4))
    quat[:, 0] = 1.0
    return Scene(pos, col, np.log(scale)[:, None] * np.ones((1, 3)), quat,
                 logit, region, lmk)


def _neutral_landmarks(factors, z_surf):
    sx, sy, sz = factors.skull
    cx, cy, cz = _HEAD_RADII * np.asarray(factors.skull)
    lmk = np.zeros((12, 3))

    def on_face(x, y, lift=0.01):
        return np.array([x, y, z_surf(x, y) + lift])

    lmk[0] = on_face(-0.215 * sx, 0.10 * sy, 0.015)   # eye_outer_l
    lmk[1] = on_face(-0.105 * sx, 0.10 * sy, 0.015)   # eye_inner_l
    lmk[2] = on_face(0.105 * sx, 0.10 * sy, 0.015)    # eye_inner_r
    lmk[3] = on_face(0.215 * sx, 0.10 * sy, 0.015)    # eye_outer_r
    # nose tip matches the ridge rule at t = 0.5
    lmk[4] = np.array([0.0, -0.01 * sy,
                       z_surf(0.0, -0.01 * sy) + factors.nose])
    lmk[5] = on_face(-0.14 * sx, -0.24 * sy)          # mouth_corner_l
    lmk[6] = on_face(0.14 * sx, -0.24 * sy)           # mouth_corner_r
    lmk[7] = np.array([0.0, -cy * np.cos(0.35), cz * np.sin(0.35)])  # jaw/chin
    lmk[8] = on_face(-0.08 * sx, 0.245 * sy)          # brow_inner_l
    lmk[9] = on_face(-0.24 * sx, 0.245 * sy)          # brow_outer_l
    lmk[10] = on_face(0.08 * sx, 0.245 * sy)          # brow_inner_r
    lmk[11] = on_face(0.24 * sx, 0.245 * sy)          # brow_outer_r
    return lmk


def _jaw_weight(y, sy):
    return np.clip((_JAW_Y0 * sy - y) / (_JAW_RAMP * sy), 0.0, 1.0)


def _jaw_rotate(pts, angles, sy, sz):
    """Rotate points about the x-axis hinge by per-point angles (jaw open)."""
    h = _JAW_HINGE * np.array([1.0, sy, sz])
    r = pts - h
    ca, sa = np.cos(angles), np.sin(angles)
    out = np.empty_like(pts)
    out[:, 0] = pts[:, 0]
    out[:, 1] = h[1] + r[:, 1] * ca - r[:, 2] * sa
    out[:, 2] = h[2] + r[:, 1] * sa + r[:, 2] * ca
    return out


def _apply_expression(factors, pos, region, pull, lmk):
    sx, sy, sz = factors.skull
    pos, lmk = pos.copy(), lmk.copy()

    # brow raise: vertical shift of brow splats and landmarks
    brows = (region == REGIONS.index("brow_l")) | (region == REGIONS.index("brow_r"))
    pos[brows, 1] += factors.brow
    lmk[8:12, 1] += factors.brow

    # mouth-corner offset: outward-and-up pull, strongest at the corners
    m = factors.mouth
    pos[:, 0] += np.sign(pull) * np.abs(pull) * 0.3 * m
    pos[:, 1] += np.abs(pull) * m
    for i, sign in ((5, -1.0), (6, 1.0)):
        lmk[i, 0] += sign * 0.3 * m
        lmk[i, 1] += m

    # jaw open: soft-weighted rotation about the ear-line hinge
    if factors.jaw != 0.0:
        pos = _jaw_rotate(pos, factors.jaw * _jaw_weight(pos[:, 1], sy), sy, sz)
        lmk = _jaw_rotate(lmk, factors.jaw * _jaw_weight(lmk[:, 1], sy), sy, sz)
    return pos, lmk
