"""Mean-shape field network, guide mesh extraction, smoothing, rendering."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..diffcore import (AdamState, adam_step, engine, init_mlp, mlp_forward,
                        mlp_value, posenc, posenc_dim)
from ..splatcore import raster
from . import tets as tetmod

SDF_BANDS = 4  # positional-encoding bands on field-network input


@dataclass
class GuideMesh:
    verts: np.ndarray   # (M, 3)
    faces: np.ndarray   # (T, 3) int
    feats: np.ndarray   # (M, F_ch)


def init_sdf_net(store, fdim, rng, hidden=(64, 64, 64)):
    """Register the mean-shape field network: position -> (field, feature)."""
    sizes = (posenc_dim(3, SDF_BANDS),) + tuple(hidden) + (1 + fdim,)
    init_mlp(store, "f_mean", sizes, rng, sigma=0.1)


def eval_sdf_field(store, positions):
    """Evaluate the field network. Returns (s Var (L,), gamma Var (L, F))."""
    out = mlp_forward(store, "f_mean", posenc(positions, SDF_BANDS))
    if not np.all(np.isfinite(out.value)):
        raise FloatingPointError("field network produced non-finite values")
    s = engine.reshape(out[:, 0:1], (-1,))
    gamma = out[:, 1:]
    return s, gamma


def ellipsoid_sdf(p, axes, center=(0.0, 0.0, 0.0)):
    """Approximate signed distance to an axis-aligned ellipsoid."""
    q = (p - np.asarray(center)) / np.asarray(axes)
    r = np.linalg.norm(q, axis=-1)
    return (r - 1.0) * float(np.mean(axes))


def pretrain_sdf(store, rng, axes=(0.62, 0.78, 0.68), center=(0.0, 0.0, 0.0),
                 box=1.0, steps=300, batch=512, lr=1e-2):
    """Regress the field network onto an analytic head-sized ellipsoid.

    Gives marching tets a closed starting surface; the feature channels are
    left free. Run before any guide-stage training.
    """
    state = AdamState()
    for _ in range(steps):
        p = rng.uniform(-box, box, size=(batch, 3))
        target = ellipsoid_sdf(p, axes, center)
        s, _ = eval_sdf_field(store, p)
        diff = s - engine.constant(target)
        loss = engine.vmean(diff * diff)
        store.zero_grads()
        engine.backward(loss)
        adam_step(state, store, lr, only=["f_mean"])
    return store


def _field_values(store, positions):
    """Field network values (L, 1+F) without building a graph."""
    out = mlp_value(store, "f_mean", posenc(positions, SDF_BANDS).value)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("field network produced non-finite values")
    return out


def extract_guide_mesh(store, positions, tet_idx):
    """Non-differentiable convenience wrapper returning a GuideMesh."""
    out = _field_values(store, positions)
    verts, feats, faces, _ = tetmod.marching_tets(out[:, 0], out[:, 1:],
                                                  positions, tet_idx)
    return GuideMesh(verts, faces, feats)


def extract_surface_vars(store, positions, tet_idx):
    """Differentiable extraction: (packed Var (M, 3+F), faces).

    The field network is evaluated once without the graph to fix the mesh;
    graph evaluation is then restricted to lattice points on sign-crossing
    edges, the only rows whose gradient can be nonzero.
    """
    enc = posenc(positions, SDF_BANDS).value
    raw = mlp_value(store, "f_mean", enc)
    if not np.all(np.isfinite(raw)):
        raise FloatingPointError("field network produced non-finite values")
    verts, feats, faces, bwd = tetmod.marching_tets(raw[:, 0], raw[:, 1:],
                                                    positions, tet_idx)
    pts = np.union1d(bwd["lo"], bwd["hi"])
    out_sub = mlp_forward(store, "f_mean", enc[pts])
    packed = np.concatenate([verts, feats], axis=1)

    def vjp(g):
        ds, dgamma = tetmod.marching_tets_backward(bwd, g[:, :3], g[:, 3:])
        return (np.concatenate([ds[pts, None], dgamma[pts]], axis=1),)

    return engine.custom(packed, (out_sub,), vjp), faces


def vertex_adjacency(faces, n_verts):
    """Unique directed neighbor pairs (rows, cols) from a triangle list."""
    if len(faces) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e = np.concatenate([e, e[:, ::-1]]).astype(np.int64)
    # scalar keys sort lexicographically like the (row, col) pairs would
    key = np.unique(e[:, 0] * np.int64(n_verts) + e[:, 1])
    return key // n_verts, key % n_verts


def umbrella_residuals(verts, faces):
    """Per-vertex v - mean(one-ring) as a plain array (no gradients)."""
    m = len(verts)
    rows, cols = vertex_adjacency(faces, m)
    counts = np.bincount(rows, minlength=m).astype(np.float64)
    nbr_sum = np.zeros_like(verts)
    np.add.at(nbr_sum, rows, verts[cols])
    res = verts - nbr_sum / np.maximum(counts, 1.0)[:, None]
    res[counts == 0] = 0.0
    return res


def laplacian_loss(verts_var, faces, adjacency=None):
    """Mean squared umbrella residual: ||v - mean(one-ring)||^2 over vertices.

    Vertices without neighbors contribute zero. ``adjacency`` takes a
    precomputed ``vertex_adjacency(faces, m)`` pair so a batch sharing one
    topology pays for it once.
    """
    if not isinstance(verts_var, engine.Var):
        verts_var = engine.constant(verts_var)
    m = verts_var.value.shape[0]
    if m == 0:
        return engine.constant(0.0)
    rows, cols = adjacency if adjacency is not None else vertex_adjacency(faces, m)
    counts = np.bincount(rows, minlength=m).astype(np.float64)
    has_nbr = counts > 0
    inv = np.where(has_nbr, 1.0 / np.maximum(counts, 1.0), 0.0)
    nbr_sum = engine.segment_sum(verts_var[cols], rows, m)
    nbr_mean = nbr_sum * engine.constant(inv[:, None])
    res = (verts_var - nbr_mean) * engine.constant(has_nbr[:, None].astype(float))
    return engine.vmean(engine.vsum(res * res, axis=1))


def splat_scale_for_mesh(verts, faces):
    """Log-scale for vertex splats: half the mean edge length."""
    if len(faces) == 0 or len(verts) < 2:
        return np.log(1e-2)
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    lo = np.minimum(e[:, 0], e[:, 1])
    hi = np.maximum(e[:, 0], e[:, 1])
    uniq = np.unique(lo * len(verts) + hi)
    a, b = uniq // len(verts), uniq % len(verts)
    mean_edge = np.linalg.norm(verts[a] - verts[b], axis=1).mean()
    return float(np.log(max(0.5 * mean_edge, 1e-5)))


GUIDE_SPLAT_LOGIT = 6.0  # opacity ~0.9975: near-solid vertex splats


def render_guide(verts_var, colors_var, faces, camera):
    """Render mesh vertices as small isotropic splats.

    Returns a packed (F+1, H, W) Var: feature channels then alpha. Gradients
    flow to vertex positions and colors; splat shape is held fixed.
    """
    if not isinstance(verts_var, engine.Var):
        verts_var = engine.constant(verts_var)
    if not isinstance(colors_var, engine.Var):
        colors_var = engine.constant(colors_var)
    m = verts_var.value.shape[0]
    fdim = colors_var.value.shape[1]
    if m == 0:
        return engine.constant(np.zeros((fdim + 1, camera.height, camera.width)))
    ls = splat_scale_for_mesh(verts_var.value, faces)
    logscale = np.full((m, 3), ls)
    quat = np.tile([1.0, 0.0, 0.0, 0.0], (m, 1))
    logit = np.full(m, GUIDE_SPLAT_LOGIT)
    return raster.render(verts_var, colors_var, logscale, quat, logit, camera)


def export_obj(path, mesh: GuideMesh):
    with open(path, "w") as f:
        for v in mesh.verts:
            f.write(f"v {v[0]:.8f} {v[1]:.8f} {v[2]:.8f}\n")
        for face in mesh.faces:
            f.write(f"f {face[0] + 1} {face[1] + 1} {face[2] + 1}\n")
