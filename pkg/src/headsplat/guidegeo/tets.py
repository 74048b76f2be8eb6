"""Marching tetrahedra over a regular lattice, differentiable in the field.

The lattice is a res^3 grid over an axis-aligned box, each cube split into
6 tetrahedra around the main diagonal (Kuhn triangulation). Surface vertices
sit at linear zero crossings of the scalar field along sign-change edges;
per-lattice features are interpolated with the same weight, so gradients
flow to both the field values and the features.

Sign convention: field < 0 is inside; extracted face normals point outward.
"""

from __future__ import annotations

import numpy as np

from ..diffcore import engine

TET_EDGES = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
_EDGE_IDX = {e: k for k, e in enumerate(TET_EDGES)}
_EDGE_IDX.update({(b, a): k for k, (a, b) in enumerate(TET_EDGES)})


def _case_table():
    """For each 4-bit inside mask, triangles as triples of tet-edge ids."""
    table = []
    for case in range(16):
        inside = [v for v in range(4) if case >> v & 1]
        outside = [v for v in range(4) if not case >> v & 1]
        if len(inside) in (0, 4):
            table.append([])
        elif len(inside) in (1, 3):
            apex = inside[0] if len(inside) == 1 else outside[0]
            others = [v for v in range(4) if v != apex]
            e = [_EDGE_IDX[(apex, o)] for o in others]
            table.append([(e[0], e[1], e[2])])
        else:
            i0, i1 = inside
            o0, o1 = outside
            ring = [_EDGE_IDX[(i0, o0)], _EDGE_IDX[(i0, o1)],
                    _EDGE_IDX[(i1, o1)], _EDGE_IDX[(i1, o0)]]
            table.append([(ring[0], ring[1], ring[2]),
                          (ring[0], ring[2], ring[3])])
    return table


_CASES = _case_table()


def build_lattice(res, box=1.0):
    """Vertex positions (res^3, 3) and tet index array (ncubes*6, 4).

    The box spans [-box, box]^3; vertex (i,j,k) flattens to i*res^2+j*res+k
    with i over x, j over y, k over z.
    """
    lin = np.linspace(-box, box, res)
    gx, gy, gz = np.meshgrid(lin, lin, lin, indexing="ij")
    positions = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)

    i, j, k = np.meshgrid(np.arange(res - 1), np.arange(res - 1),
                          np.arange(res - 1), indexing="ij")
    base = (i * res + j) * res + k
    base = base.reshape(-1)
    # cube corner c = bx + 2 by + 4 bz relative to base
    strides = np.array([res * res, res, 1])
    corner = np.array([[bx, by, bz] for bz in (0, 1) for by in (0, 1)
                       for bx in (0, 1)])  # corner c = bx + 2 by + 4 bz
    offs = corner @ strides  # corner index -> flat offset
    # Kuhn split: one tet per axis permutation, walking 0 -> 7
    perms = [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]
    axis_bit = np.array([1, 2, 4])  # +x, +y, +z in corner numbering
    tets = []
    for p in perms:
        c0 = 0
        c1 = c0 + axis_bit[p[0]]
        c2 = c1 + axis_bit[p[1]]
        tets.append([offs[c0], offs[c1], offs[c2], offs[7]])
    tets = np.array(tets)  # (6, 4) offsets
    all_tets = base[:, None, None] + tets[None, :, :]
    return positions, all_tets.reshape(-1, 4)


def marching_tets(s, gamma, positions, tets):
    """Extract the zero surface. Returns (verts, feats, faces, bwd).

    ``bwd`` carries everything the gradient pass needs. An all-positive or
    all-negative field yields an empty mesh.
    """
    s = np.asarray(s, dtype=np.float64)
    fdim = gamma.shape[1]
    inside = s < 0.0
    code = (inside[tets[:, 0]].astype(np.int64)
            | inside[tets[:, 1]] << 1
            | inside[tets[:, 2]] << 2
            | inside[tets[:, 3]] << 3)

    tri_tet = []
    tri_edges = []
    for case in range(1, 15):
        tris = _CASES[case]
        if not tris:
            continue
        tids = np.flatnonzero(code == case)
        if tids.size == 0:
            continue
        for tri in tris:
            tri_tet.append(tids)
            tri_edges.append(np.tile(tri, (tids.size, 1)))
    if not tri_tet:
        empty = np.zeros((0, 3))
        return empty, np.zeros((0, fdim)), np.zeros((0, 3), dtype=np.int64), \
            {"lo": np.zeros(0, dtype=np.int64), "hi": np.zeros(0, dtype=np.int64),
             "t": np.zeros(0), "positions": positions, "gamma": gamma,
             "s": s, "nlattice": s.shape[0]}

    tri_tet = np.concatenate(tri_tet)
    tri_edges = np.concatenate(tri_edges)          # (T, 3) local edge ids
    edge_ab = np.array(TET_EDGES)                  # (6, 2) local vertex ids
    corners = tets[tri_tet]                        # (T, 4) global ids
    ga = np.take_along_axis(corners, edge_ab[tri_edges][:, :, 0], axis=1)
    gb = np.take_along_axis(corners, edge_ab[tri_edges][:, :, 1], axis=1)
    lo = np.minimum(ga, gb)
    hi = np.maximum(ga, gb)

    key = lo.astype(np.int64) * s.shape[0] + hi
    uniq, inv = np.unique(key, return_inverse=True)
    faces = inv.reshape(-1, 3)
    ulo = (uniq // s.shape[0]).astype(np.int64)
    uhi = (uniq % s.shape[0]).astype(np.int64)

    t = s[ulo] / (s[ulo] - s[uhi])
    verts = positions[ulo] + t[:, None] * (positions[uhi] - positions[ulo])
    feats = gamma[ulo] + t[:, None] * (gamma[uhi] - gamma[ulo])

    # outward orientation: normal must point away from the inside corners
    tet_in = inside[tets[tri_tet]]                     # (T, 4)
    w_in = tet_in / tet_in.sum(axis=1, keepdims=True)
    q = np.einsum("tc,tcx->tx", w_in, positions[tets[tri_tet]])
    p0, p1, p2 = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
    nrm = np.cross(p1 - p0, p2 - p0)
    centroid = (p0 + p1 + p2) / 3.0
    flip = np.einsum("tx,tx->t", nrm, centroid - q) < 0.0
    faces[flip] = faces[flip][:, [0, 2, 1]]

    area2 = np.linalg.norm(np.cross(p1 - p0, p2 - p0), axis=1)
    faces = faces[area2 > 2e-12]

    # canonical face order: rotate smallest index first, then sort rows
    roll = np.argmin(faces, axis=1)
    faces = np.stack([faces[np.arange(len(faces)), roll],
                      faces[np.arange(len(faces)), (roll + 1) % 3],
                      faces[np.arange(len(faces)), (roll + 2) % 3]], axis=1)
    faces = faces[np.lexsort((faces[:, 2], faces[:, 1], faces[:, 0]))]

    bwd = {"lo": ulo, "hi": uhi, "t": t, "positions": positions,
           "gamma": gamma, "s": s, "nlattice": s.shape[0]}
    return verts, feats, faces, bwd


def marching_tets_backward(bwd, dverts, dfeats):
    """Map vertex/feature grads back to (field grads, feature grads)."""
    lo, hi, t = bwd["lo"], bwd["hi"], bwd["t"]
    positions, gamma, s = bwd["positions"], bwd["gamma"], bwd["s"]
    ds = np.zeros_like(s)
    dgamma = np.zeros_like(gamma)
    if lo.size == 0:
        return ds, dgamma

    dt = np.einsum("mx,mx->m", dverts, positions[hi] - positions[lo])
    dt += np.einsum("mf,mf->m", dfeats, gamma[hi] - gamma[lo])
    denom = (s[lo] - s[hi]) ** 2
    np.add.at(ds, lo, dt * (-s[hi] / denom))
    np.add.at(ds, hi, dt * (s[lo] / denom))
    np.add.at(dgamma, lo, dfeats * (1.0 - t[:, None]))
    np.add.at(dgamma, hi, dfeats * t[:, None])
    return ds, dgamma


def extract_surface(s_var, gamma_var, positions, tets):
    """Engine op: returns (packed Var (M, 3+F_ch), faces int array)."""
    if not isinstance(s_var, engine.Var):
        s_var = engine.constant(s_var)
    if not isinstance(gamma_var, engine.Var):
        gamma_var = engine.constant(gamma_var)
    verts, feats, faces, bwd = marching_tets(s_var.value, gamma_var.value,
                                             positions, tets)
    packed = np.concatenate([verts, feats], axis=1)

    def vjp(g):
        return marching_tets_backward(bwd, g[:, :3], g[:, 3:])

    return engine.custom(packed, (s_var, gamma_var), vjp), faces
