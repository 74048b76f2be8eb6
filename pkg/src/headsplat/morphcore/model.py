"""Identity/expression-conditioned deformation of the mean Gaussian model.

All learned pieces live in one ParamStore under fixed name prefixes, so the
guide stage and the Gaussian stage share f_inj/f_id/f_exp/f_col parameters
by construction and checkpoints migrate by name.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..diffcore import engine, init_mlp, mlp_forward
from . import transforms


@dataclass
class ModelConfig:
    fdim: int = 8        # feature/color channels
    d_id: int = 32       # identity code width
    d_exp: int = 16      # expression code width
    inj_hidden: tuple = (64,)
    id_hidden: tuple = (32,)
    exp_hidden: tuple = (64, 32)
    col_hidden: tuple = (64,)
    att_hidden: tuple = (64,)
    n_landmarks: int = 12

    def to_dict(self):
        return {"fdim": self.fdim, "d_id": self.d_id, "d_exp": self.d_exp,
                "inj_hidden": list(self.inj_hidden),
                "id_hidden": list(self.id_hidden),
                "exp_hidden": list(self.exp_hidden),
                "col_hidden": list(self.col_hidden),
                "att_hidden": list(self.att_hidden),
                "n_landmarks": self.n_landmarks}

    @classmethod
    def from_dict(cls, d):
        return cls(fdim=d["fdim"], d_id=d["d_id"], d_exp=d["d_exp"],
                   inj_hidden=tuple(d["inj_hidden"]),
                   id_hidden=tuple(d["id_hidden"]),
                   exp_hidden=tuple(d["exp_hidden"]),
                   col_hidden=tuple(d["col_hidden"]),
                   att_hidden=tuple(d["att_hidden"]),
                   n_landmarks=d["n_landmarks"])


def init_shared_nets(store, cfg: ModelConfig, rng):
    """Networks used by both stages. Offset heads start as zero functions."""
    f = cfg.fdim
    init_mlp(store, "f_inj", (f + cfg.d_id,) + cfg.inj_hidden + (f,), rng)
    init_mlp(store, "f_id", (f,) + cfg.id_hidden + (3,), rng, zero_final=True)
    init_mlp(store, "f_exp", (f + cfg.d_exp,) + cfg.exp_hidden + (3,), rng,
             zero_final=True)
    init_mlp(store, "f_col", (f + cfg.d_exp,) + cfg.col_hidden + (f,), rng)


def init_attribute_net(store, cfg: ModelConfig, rng):
    """Gaussian-stage attribute head: random hidden layers, zero final."""
    f = cfg.fdim
    init_mlp(store, "f_att", (f + cfg.d_exp,) + cfg.att_hidden + (8,), rng,
             zero_final=True)


def _rows(z, n):
    """Broadcast a (D,) code Var to (n, D) differentiably."""
    if not isinstance(z, engine.Var):
        z = engine.constant(z)
    d = z.value.shape[-1]
    return engine.reshape(z, (1, d)) + engine.constant(np.zeros((n, d)))


def inject_identity(store, z_id, gamma):
    """H = f_inj(features, identity code), one row per point."""
    if not isinstance(gamma, engine.Var):
        gamma = engine.constant(gamma)
    n = gamma.value.shape[0]
    h_in = engine.concat([gamma, _rows(z_id, n)], axis=1)
    return mlp_forward(store, "f_inj", h_in)


def deform_canonical(store, base, h, z_exp):
    """Canonical positions: base + identity offset + expression offset.

    Returns (x_can, delta_id, delta_exp); both displacement fields feed the
    code regularizer.
    """
    if not isinstance(base, engine.Var):
        base = engine.constant(base)
    n = h.value.shape[0]
    delta_id = mlp_forward(store, "f_id", h)
    delta_exp = mlp_forward(store, "f_exp",
                            engine.concat([h, _rows(z_exp, n)], axis=1))
    return base + delta_id + delta_exp, delta_id, delta_exp


def compute_color(store, h, z_exp):
    n = h.value.shape[0]
    return mlp_forward(store, "f_col",
                       engine.concat([h, _rows(z_exp, n)], axis=1))


def compute_attributes(store, h, z_exp, s0, q0, a0):
    """Mean attributes plus predicted offsets, in pre-activation space.

    s0 (3,), q0 (4,), a0 (1,) are Vars or arrays shared by all points; the
    offset head emits (N, 8) = 3 log-scale + 4 quaternion + 1 opacity logit.
    Quaternions are unit-normalized here.
    """
    if not isinstance(s0, engine.Var):
        s0 = engine.constant(s0)
    if not isinstance(q0, engine.Var):
        q0 = engine.constant(q0)
    if not isinstance(a0, engine.Var):
        a0 = engine.constant(a0)
    n = h.value.shape[0]
    att = mlp_forward(store, "f_att",
                      engine.concat([h, _rows(z_exp, n)], axis=1))
    s = engine.reshape(s0, (1, 3)) + att[:, 0:3]
    q = engine.reshape(q0, (1, 4)) + att[:, 3:7]
    norm = engine.sqrt(engine.vsum(q * q, axis=1, keepdims=True))
    q = q / norm
    a = engine.reshape(a0, (1,)) + att[:, 7]
    return s, q, a


def transform_landmarks(store, p0, gamma_p, z_id, z_exp, pose):
    """World landmarks: displace canonical landmarks like ordinary points."""
    if not isinstance(p0, engine.Var):
        p0 = engine.constant(p0)
    h_p = inject_identity(store, z_id, gamma_p)
    p_can, _, _ = deform_canonical(store, p0, h_p, z_exp)
    return transforms.apply_pose_points(p_can, pose)


def init_mean_model(store, cfg: ModelConfig, x0, gamma0, p0,
                    s0=None, q0=None, a0=0.0):
    """Register the mean Gaussian model entries (typically at migration).

    ``s0`` defaults to log(mean nearest-neighbor distance of x0); q0 to the
    identity quaternion; a0 to logit 0 (opacity one half).
    """
    if s0 is None:
        from scipy.spatial import cKDTree
        d, _ = cKDTree(x0).query(x0, k=2)
        s0 = np.full(3, np.log(max(float(d[:, 1].mean()), 1e-6)))
    if q0 is None:
        q0 = np.array([1.0, 0.0, 0.0, 0.0])
    store.add("mean.X0", x0)
    store.add("mean.gamma0", gamma0)
    store.add("mean.S0", np.asarray(s0, dtype=np.float64).reshape(3))
    store.add("mean.Q0", np.asarray(q0, dtype=np.float64).reshape(4))
    store.add("mean.A0", np.array([float(a0)]))
    store.add("mean.P0", p0)
    store.add("mean.gammaP", np.zeros((len(p0), cfg.fdim)))


def gaussian_frame(store, cfg: ModelConfig, z_id, z_exp, pose):
    """Full deformation chain for the Gaussian model.

    Returns a dict of Vars: world positions X, colors C, log-scales S,
    world quaternions Q, opacity logits A, world landmarks P, plus the
    displacement fields delta_id / delta_exp for the regularizer.
    """
    x0 = store.leaf("mean.X0")
    gamma0 = store.leaf("mean.gamma0")
    h = inject_identity(store, z_id, gamma0)
    x_can, d_id, d_exp = deform_canonical(store, x0, h, z_exp)
    c = compute_color(store, h, z_exp)
    s, q_can, a = compute_attributes(store, h, z_exp,
                                     store.leaf("mean.S0"),
                                     store.leaf("mean.Q0"),
                                     store.leaf("mean.A0"))
    x, q = transforms.to_world(x_can, q_can, pose)
    p = transform_landmarks(store, store.leaf("mean.P0"),
                            store.leaf("mean.gammaP"), z_id, z_exp, pose)
    return {"X": x, "C": c, "S": s, "Q": q, "A": a, "P": p,
            "delta_id": d_id, "delta_exp": d_exp}
