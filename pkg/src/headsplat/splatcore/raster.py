"""Differentiable Gaussian splat rasterizer.

Splats carry pre-activation parameters: log-scale, rotation quaternion
(w,x,y,z, normalized inside the graph), opacity logit, and an F-channel
feature color. Projection follows the standard EWA chain: world covariance
R diag(exp(ls))^2 R^T, screen covariance J W Sigma W^T J^T plus a 0.3 px^2
diagonal floor. Compositing is front-to-back over depth-sorted splats,
terminating once transmittance drops below 1e-4; equal depths break ties by
ascending splat index.

The footprint weight exp(-q/2) is clamped to exactly 0 beyond q = 9 (the
3 sigma ellipse). Tiles cull against the matching 3 sigma disc, so culling
removes only exactly-zero contributions and the tiled image equals the
brute-force oracle bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ..diffcore import engine

TILE = 8
NEAR = 0.01       # camera-space near plane for validity
COV_FLOOR = 0.3   # px^2 added to the screen covariance diagonal
T_MIN = 1e-4      # stop compositing below this transmittance
Q_CUT = 9.0       # Mahalanobis^2 beyond which the footprint weight is 0
ALPHA_MAX = 1.0 - 1e-7


@dataclass
class FeatureImage:
    """Rendered F-channel image (H, W, F) with its alpha map (H, W)."""
    values: np.ndarray
    alpha: np.ndarray

    @property
    def rgb(self):
        return np.clip(self.values[:, :, :3], 0.0, 1.0)


def quat_to_rot(q):
    """Unit quaternions (N,4) wxyz to rotation matrices (N,3,3)."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((q.shape[0], 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def _sigmoid(x):
    return expit(x)


def _check_finite(name, arr):
    bad = ~np.isfinite(arr.reshape(arr.shape[0], -1)).all(axis=1)
    if bad.any():
        raise ValueError(f"non-finite {name} for splat {int(np.flatnonzero(bad)[0])}")


def project_splats(position, logscale, quat, camera):
    """EWA projection of every splat.

    Returns dict with mean2d (N,2), cov2d (N,2,2, floored), conic (N,2,2),
    depth (N,), radius (N, pixels, 3 sigma disc) and valid (N, bool). The
    intermediates needed by the backward pass ride along.
    """
    n = position.shape[0]
    t = position @ camera.R_wc.T + camera.t
    depth = t[:, 2].copy()
    valid = depth >= NEAR
    tz = np.where(valid, depth, 1.0)

    qn = quat / np.linalg.norm(quat, axis=1, keepdims=True)
    R = quat_to_rot(qn)
    s2 = np.exp(2.0 * logscale)                     # diag of D
    cov3d = np.einsum("nik,nk,njk->nij", R, s2, R)  # R D R^T

    J = np.zeros((n, 2, 3))
    J[:, 0, 0] = camera.fx / tz
    J[:, 0, 2] = -camera.fx * t[:, 0] / tz ** 2
    J[:, 1, 1] = camera.fy / tz
    J[:, 1, 2] = -camera.fy * t[:, 1] / tz ** 2
    M = J @ camera.R_wc
    cov2d = M @ cov3d @ M.transpose(0, 2, 1)
    cov2d[:, 0, 0] += COV_FLOOR
    cov2d[:, 1, 1] += COV_FLOOR

    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    conic = np.empty_like(cov2d)
    conic[:, 0, 0] = c / det
    conic[:, 0, 1] = -b / det
    conic[:, 1, 0] = -b / det
    conic[:, 1, 1] = a / det

    lam_max = 0.5 * (a + c) + np.sqrt(0.25 * (a - c) ** 2 + b * b)
    radius = 3.0 * np.sqrt(lam_max)

    mean2d = np.stack([camera.fx * t[:, 0] / tz + camera.cx,
                       camera.fy * t[:, 1] / tz + camera.cy], axis=1)

    radius = np.where(valid, radius, 0.0)
    return {"mean2d": mean2d, "cov2d": cov2d, "conic": conic, "depth": depth,
            "radius": radius, "valid": valid, "t": t, "J": J, "M": M,
            "cov3d": cov3d, "R": R, "s2": s2, "qn": qn}


def _tile_lists(proj, camera):
    """Per-tile splat index lists, each sorted by (depth, index).

    Returns (ntiles_y, ntiles_x, entries, starts) where entries is a flat
    index array and starts has one slice boundary per tile plus a final
    sentinel.
    """
    nty = (camera.height + TILE - 1) // TILE
    ntx = (camera.width + TILE - 1) // TILE
    mean2d, radius, valid = proj["mean2d"], proj["radius"], proj["valid"]
    depth = proj["depth"]

    idx = np.flatnonzero(valid)
    if idx.size == 0:
        return nty, ntx, np.zeros(0, dtype=np.int64), np.zeros(nty * ntx + 1, dtype=np.int64)
    mx, my, r = mean2d[idx, 0], mean2d[idx, 1], radius[idx]
    j0 = np.clip(np.floor((mx - r) / TILE).astype(np.int64), 0, ntx - 1)
    j1 = np.clip(np.floor((mx + r) / TILE).astype(np.int64), 0, ntx - 1)
    i0 = np.clip(np.floor((my - r) / TILE).astype(np.int64), 0, nty - 1)
    i1 = np.clip(np.floor((my + r) / TILE).astype(np.int64), 0, nty - 1)
    nj = j1 - j0 + 1
    counts = nj * (i1 - i0 + 1)
    total = int(counts.sum())
    rep = np.repeat(np.arange(idx.size), counts)
    offs = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    tj = j0[rep] + offs % nj[rep]
    ti = i0[rep] + offs // nj[rep]
    tile = ti * ntx + tj
    splat = idx[rep]
    order = np.lexsort((splat, depth[splat], tile))
    tile, splat = tile[order], splat[order]
    starts = np.searchsorted(tile, np.arange(nty * ntx + 1))
    return nty, ntx, splat, starts


def _tile_pixels(ti, tj, camera):
    """Pixel-center coordinates of tile (ti, tj): (npx, 2), row-major."""
    r0, c0 = ti * TILE, tj * TILE
    rows = np.arange(r0, min(r0 + TILE, camera.height))
    cols = np.arange(c0, min(c0 + TILE, camera.width))
    jj, ii = np.meshgrid(cols, rows)
    return np.stack([jj.ravel() + 0.5, ii.ravel() + 0.5], axis=1), rows, cols


def _composite(sel, proj, opac, px):
    """Weights for splats ``sel`` (depth-sorted) over pixels ``px``.

    Returns (w, alpha, T, G, dx, dy) with shapes (n, npx) etc. Applies the
    3 sigma weight cutoff, the alpha ceiling, and transmittance termination
    exactly as the backward pass expects.
    """
    mean = proj["mean2d"][sel]
    dx = px[None, :, 0] - mean[:, 0, None]
    dy = px[None, :, 1] - mean[:, 1, None]
    C = proj["conic"][sel]
    q = (C[:, 0, 0, None] * (dx * dx)
         + 2.0 * C[:, 0, 1, None] * dx * dy
         + C[:, 1, 1, None] * (dy * dy))
    inside = q <= Q_CUT
    G = np.zeros_like(q)
    G[inside] = np.exp(-0.5 * q[inside])
    alpha = np.minimum(opac[sel][:, None] * G, ALPHA_MAX)
    T = np.cumprod(1.0 - alpha, axis=0)
    T = np.concatenate([np.ones((1, px.shape[0])), T[:-1]], axis=0)
    live = T >= T_MIN
    w = alpha * T * live
    return w, alpha, T, G, dx, dy


def rasterize(position, color, logscale, quat, logit, camera,
              return_tape=False):
    """Tiled forward render. Returns FeatureImage, or (FeatureImage, tape)."""
    for name, arr in (("position", position), ("color", color),
                      ("logscale", logscale), ("quat", quat),
                      ("logit", logit.reshape(-1, 1))):
        _check_finite(name, arr)
    proj = project_splats(position, logscale, quat, camera)
    opac = _sigmoid(logit)
    nty, ntx, entries, starts = _tile_lists(proj, camera)

    fdim = color.shape[1]
    img = np.zeros((camera.height, camera.width, fdim))
    amap = np.zeros((camera.height, camera.width))
    for ti in range(nty):
        for tj in range(ntx):
            k = ti * ntx + tj
            sel = entries[starts[k]:starts[k + 1]]
            if sel.size == 0:
                continue
            px, rows, cols = _tile_pixels(ti, tj, camera)
            w = _composite(sel, proj, opac, px)[0]
            tile_img = w.T @ color[sel]
            img[np.ix_(rows, cols)] = tile_img.reshape(len(rows), len(cols), fdim)
            amap[np.ix_(rows, cols)] = w.sum(axis=0).reshape(len(rows), len(cols))

    out = FeatureImage(img, amap)
    if not return_tape:
        return out
    tape = {"position": position.copy(), "color": color.copy(),
            "logscale": logscale.copy(), "quat": quat.copy(),
            "logit": logit.copy(), "camera": camera, "proj": proj,
            "opac": opac, "tiles": (nty, ntx, entries, starts)}
    return out, tape


def oracle_rasterize(position, color, logscale, quat, logit, camera):
    """Brute force: every splat against every pixel, one full sort, no tiles."""
    proj = project_splats(position, logscale, quat, camera)
    opac = _sigmoid(logit)
    fdim = color.shape[1]
    h, w_ = camera.height, camera.width
    jj, ii = np.meshgrid(np.arange(w_), np.arange(h))
    px = np.stack([jj.ravel() + 0.5, ii.ravel() + 0.5], axis=1)

    idx = np.flatnonzero(proj["valid"])
    if idx.size == 0:
        return FeatureImage(np.zeros((h, w_, fdim)), np.zeros((h, w_)))
    order = np.lexsort((idx, proj["depth"][idx]))
    sel = idx[order]
    w = _composite(sel, proj, opac, px)[0]
    img = (w.T @ color[sel]).reshape(h, w_, fdim)
    amap = w.sum(axis=0).reshape(h, w_)
    return FeatureImage(img, amap)


def rasterize_backward(tape, dvalues, dalpha=None):
    """Analytic backward of ``rasterize``.

    ``dvalues`` is (H, W, F); ``dalpha`` (H, W) or None. Returns gradient
    dict for position, color, logscale, quat, logit.
    """
    camera = tape["camera"]
    proj = tape["proj"]
    position, color = tape["position"], tape["color"]
    logscale, quat, logit = tape["logscale"], tape["quat"], tape["logit"]
    opac = tape["opac"]
    nty, ntx, entries, starts = tape["tiles"]
    n, fdim = color.shape
    if dalpha is None:
        dalpha = np.zeros(dvalues.shape[:2])

    dmean2d = np.zeros((n, 2))
    dconic = np.zeros((n, 2, 2))
    dcolor = np.zeros_like(color)
    dopac = np.zeros(n)

    for ti in range(nty):
        for tj in range(ntx):
            k = ti * ntx + tj
            sel = entries[starts[k]:starts[k + 1]]
            if sel.size == 0:
                continue
            px, rows, cols = _tile_pixels(ti, tj, camera)
            w, alpha, T, G, dx, dy = _composite(sel, proj, opac, px)
            live = T >= T_MIN
            dout = dvalues[np.ix_(rows, cols)].reshape(-1, fdim)   # (npx, F)
            da_px = dalpha[np.ix_(rows, cols)].ravel()             # (npx,)

            phi = color[sel] @ dout.T + da_px[None, :]             # (n_sel, npx)
            pw = phi * w
            suffix = np.cumsum(pw[::-1], axis=0)[::-1]
            s_next = np.vstack([suffix[1:], np.zeros((1, px.shape[0]))])
            dalpha_s = live * phi * T - s_next / (1.0 - alpha)
            # grad w.r.t. opac*G; dead where the alpha ceiling clamped
            dprod = dalpha_s * (opac[sel][:, None] * G <= ALPHA_MAX)

            # sel is unique within a tile, so indexed += accumulates exactly
            dcolor[sel] += w @ dout
            dopac[sel] += (dprod * G).sum(axis=1)
            dq = dprod * opac[sel][:, None] * (-0.5) * G
            C = proj["conic"][sel]
            cdx = C[:, 0, 0, None] * dx + C[:, 0, 1, None] * dy
            cdy = C[:, 0, 1, None] * dx + C[:, 1, 1, None] * dy
            dmean2d[sel, 0] += -2.0 * (dq * cdx).sum(axis=1)
            dmean2d[sel, 1] += -2.0 * (dq * cdy).sum(axis=1)
            dqdx = dq * dx
            dc01 = (dqdx * dy).sum(axis=1)
            dconic[sel, 0, 0] += (dqdx * dx).sum(axis=1)
            dconic[sel, 0, 1] += dc01
            dconic[sel, 1, 0] += dc01
            dconic[sel, 1, 1] += (dq * dy * dy).sum(axis=1)

    dlogit = dopac * opac * (1.0 - opac)

    # conic = inv(floored cov2d); radius feeds only the cull decision, which
    # is gradient-free because culled weights are exactly zero
    C = proj["conic"]
    dcov2d = -(C @ dconic @ C)

    M = proj["M"]
    cov3d = proj["cov3d"]
    dsym = dcov2d + dcov2d.transpose(0, 2, 1)
    dM = dsym @ M @ cov3d
    dcov3d = M.transpose(0, 2, 1) @ dcov2d @ M

    # cov3d = R D R^T with D = diag(exp(2 ls))
    R, s2 = proj["R"], proj["s2"]
    dsym3 = dcov3d + dcov3d.transpose(0, 2, 1)
    dR = (dsym3 @ R) * s2[:, None, :]
    RtXR = R.transpose(0, 2, 1) @ dcov3d @ R
    dD = RtXR[:, (0, 1, 2), (0, 1, 2)]
    dlogscale = dD * 2.0 * s2

    dqn = _rot_backward(proj["qn"], dR)
    # normalization: qhat = q/|q|
    qnorm = np.linalg.norm(quat, axis=1, keepdims=True)
    qn = proj["qn"]
    dquat = (dqn - qn * (dqn * qn).sum(axis=1, keepdims=True)) / qnorm

    # J and mean2d both feed the camera-space position t
    dJ = dM @ camera.R_wc.T
    t = proj["t"]
    valid = proj["valid"]
    tz = np.where(valid, t[:, 2], 1.0)
    fx, fy = camera.fx, camera.fy
    dt = np.zeros_like(t)
    dt[:, 0] = dJ[:, 0, 2] * (-fx / tz ** 2) + dmean2d[:, 0] * fx / tz
    dt[:, 1] = dJ[:, 1, 2] * (-fy / tz ** 2) + dmean2d[:, 1] * fy / tz
    dt[:, 2] = (dJ[:, 0, 0] * (-fx / tz ** 2)
                + dJ[:, 1, 1] * (-fy / tz ** 2)
                + dJ[:, 0, 2] * (2.0 * fx * t[:, 0] / tz ** 3)
                + dJ[:, 1, 2] * (2.0 * fy * t[:, 1] / tz ** 3)
                - dmean2d[:, 0] * fx * t[:, 0] / tz ** 2
                - dmean2d[:, 1] * fy * t[:, 1] / tz ** 2)
    dposition = dt @ camera.R_wc

    # splats behind the near plane never composite: zero everything
    dead = ~valid
    for g in (dposition, dcolor, dlogscale, dquat):
        g[dead] = 0.0
    dlogit[dead] = 0.0

    return {"position": dposition, "color": dcolor, "logscale": dlogscale,
            "quat": dquat, "logit": dlogit}


def _rot_backward(qn, dR):
    """d(loss)/d(unit quaternion) given d(loss)/d(rotation matrix)."""
    w, x, y, z = qn[:, 0], qn[:, 1], qn[:, 2], qn[:, 3]
    zero = np.zeros_like(w)
    # dR/dw etc, each (N,3,3); rows follow quat_to_rot
    dRw = 2.0 * np.stack([
        np.stack([zero, -z, y], axis=1),
        np.stack([z, zero, -x], axis=1),
        np.stack([-y, x, zero], axis=1)], axis=1)
    dRx = 2.0 * np.stack([
        np.stack([zero, y, z], axis=1),
        np.stack([y, -2 * x, -w], axis=1),
        np.stack([z, w, -2 * x], axis=1)], axis=1)
    dRy = 2.0 * np.stack([
        np.stack([-2 * y, x, w], axis=1),
        np.stack([x, zero, z], axis=1),
        np.stack([-w, z, -2 * y], axis=1)], axis=1)
    dRz = 2.0 * np.stack([
        np.stack([-2 * z, -w, x], axis=1),
        np.stack([w, -2 * z, y], axis=1),
        np.stack([x, y, zero], axis=1)], axis=1)
    return np.stack([(dR * dRq).sum(axis=(1, 2))
                     for dRq in (dRw, dRx, dRy, dRz)], axis=1)


def render(position, color, logscale, quat, logit, camera):
    """Engine op: render to a packed (F+1, H, W) Var (features then alpha)."""
    vars_in = [v if isinstance(v, engine.Var) else engine.constant(v)
               for v in (position, color, logscale, quat, logit)]
    img, tape = rasterize(*(v.value for v in vars_in), camera,
                          return_tape=True)
    packed = np.concatenate([img.values.transpose(2, 0, 1),
                             img.alpha[None]], axis=0)

    def vjp(g):
        grads = rasterize_backward(tape, g[:-1].transpose(1, 2, 0), g[-1])
        return (grads["position"], grads["color"], grads["logscale"],
                grads["quat"], grads["logit"])

    return engine.custom(packed, vars_in, vjp)
