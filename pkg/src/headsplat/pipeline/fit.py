"""Single-image inversion against a trained Gaussian checkpoint.

Fitting never touches the trained parameters: everything learned for the
new image lives in a small overlay store. Phase 1 optimizes only the two
latent codes. Phase 2 freezes the codes, clones the color network into the
overlay, and instantiates the fitted canonical geometry as a free point
set for fine refinement.

Expression editing keeps the phase-2 refinement as a residual on top of
the model-predicted canonical geometry, so a new expression code re-poses
the refined head instead of discarding the refinement.
"""

from dataclasses import dataclass

import numpy as np

from .. import losses as L
from ..diffcore import AdamState, ParamStore, adam_step, engine
from ..diffcore.mlp import mlp_forward
from ..morphcore import (
    ModelConfig,
    compute_attributes,
    deform_canonical,
    gaussian_frame,
    inject_identity,
    to_world,
    transform_landmarks,
    upsample,
)
from ..morphcore.model import _rows
from ..splatcore import render

PHASE1_ITERS = 200
PHASE1_LR = 1e-3
PHASE2_ITERS = 100
PHASE2_LR = 1e-4


@dataclass
class FitResult:
    overlay: ParamStore
    losses: list  # (phase, iteration, loss) rows, one per iteration


@dataclass
class EditResult:
    image: np.ndarray      # (H, W, 3) in [0, 1]
    landmarks: np.ndarray  # world landmark positions
    delta_id: np.ndarray   # identity displacement field, expression-free


def _photo_loss(store, fdim, packed, image, gt_lr):
    feat = packed[:fdim]
    hr = engine.transpose(upsample(store, feat), (1, 2, 0))
    feat_hwc = engine.transpose(feat, (1, 2, 0))
    return L.lowres_rgb_loss(feat_hwc, gt_lr) + L.photometric_l1(hr, image)


def _check_finite(loss, phase, iteration):
    if not np.isfinite(loss.value):
        raise RuntimeError(f"fit diverged (phase {phase}, "
                           f"iteration {iteration})")


def _refined_splats(store, overlay, mcfg, z_id, z_exp, pose, x_can=None):
    """Forward pass using overlay geometry and color, frozen everything else.

    ``x_can`` overrides the canonical positions (used by editing); default
    is the overlay's refined point set.
    """
    h = inject_identity(store, z_id, store.leaf("mean.gamma0"))
    if x_can is None:
        x_can = overlay.leaf("fit.X_can")
    n = h.value.shape[0]
    c = mlp_forward(overlay, "fit.f_col",
                    engine.concat([h, _rows(z_exp, n)], axis=1))
    s, q_can, a = compute_attributes(store, h, z_exp,
                                     store.leaf("mean.S0"),
                                     store.leaf("mean.Q0"),
                                     store.leaf("mean.A0"))
    x, q = to_world(x_can, q_can, pose)
    return x, c, s, q, a


def fit_image(store, image, camera, pose) -> FitResult:
    """Invert one image. ``store`` must be a trained gaussian checkpoint."""
    mcfg = ModelConfig.from_dict(store.meta["model"])
    gt_lr = L.downsample_area(image, 2)
    cam_lr = camera.scaled(0.5)
    rows = []

    overlay = ParamStore()
    overlay.add("fit.z_id", np.zeros(mcfg.d_id))
    overlay.add("fit.z_exp", np.zeros(mcfg.d_exp))

    adam = AdamState()
    for it in range(1, PHASE1_ITERS + 1):
        store.zero_grads()
        overlay.zero_grads()
        frame = gaussian_frame(store, mcfg, overlay.leaf("fit.z_id"),
                               overlay.leaf("fit.z_exp"), pose)
        packed = render(frame["X"], frame["C"], frame["S"], frame["Q"],
                        frame["A"], cam_lr)
        loss = _photo_loss(store, mcfg.fdim, packed, image, gt_lr)
        _check_finite(loss, 1, it)
        engine.backward(loss)
        adam_step(adam, overlay, PHASE1_LR, only=("fit.z_id", "fit.z_exp"))
        rows.append((1, it, float(loss.value)))

    # Instantiate the refinement targets from the fitted codes.
    z_id = overlay.value("fit.z_id").copy()
    z_exp = overlay.value("fit.z_exp").copy()
    h = inject_identity(store, z_id, store.value("mean.gamma0"))
    x_can, _, _ = deform_canonical(store, store.value("mean.X0"), h, z_exp)
    overlay.add("fit.X_can", x_can.value.copy())
    for name in store.names():
        if name.startswith("f_col."):
            overlay.add("fit." + name, store.value(name).copy())

    adam = AdamState()
    for it in range(1, PHASE2_ITERS + 1):
        store.zero_grads()
        overlay.zero_grads()
        x, c, s, q, a = _refined_splats(store, overlay, mcfg,
                                        z_id, z_exp, pose)
        packed = render(x, c, s, q, a, cam_lr)
        loss = _photo_loss(store, mcfg.fdim, packed, image, gt_lr)
        _check_finite(loss, 2, it)
        engine.backward(loss)
        adam_step(adam, overlay, PHASE2_LR,
                  only=("fit.X_can", "fit.f_col."))
        rows.append((2, it, float(loss.value)))

    overlay.meta = {"stage": "fit", "model": mcfg.to_dict(),
                    "camera": camera.to_dict(), "pose": pose.to_dict(),
                    "final_loss": rows[-1][2]}
    return FitResult(overlay, rows)


def edit_expression(store, overlay, z_exp_target, camera, pose) -> EditResult:
    """Re-render a fitted head under a new expression code.

    The phase-2 geometry refinement is carried over as a residual relative
    to the model prediction at the fitted expression, so passing the fitted
    code itself reproduces the reconstruction exactly.
    """
    mcfg = ModelConfig.from_dict(overlay.meta["model"])
    z_id = overlay.value("fit.z_id")
    z_exp_src = overlay.value("fit.z_exp")
    z_exp_target = np.asarray(z_exp_target, dtype=np.float64)
    if z_exp_target.shape != (mcfg.d_exp,):
        raise ValueError(f"expression code must have shape ({mcfg.d_exp},), "
                         f"got {z_exp_target.shape}")

    h = inject_identity(store, z_id, store.value("mean.gamma0"))
    x0 = store.value("mean.X0")
    x_src, _, _ = deform_canonical(store, x0, h, z_exp_src)
    x_tgt, d_id, _ = deform_canonical(store, x0, h, z_exp_target)
    # Identical codes give a bitwise-zero shift, hence an exact replay.
    x_can = engine.constant(overlay.value("fit.X_can")
                            + (x_tgt.value - x_src.value))
    x, c, s, q, a = _refined_splats(store, overlay, mcfg, z_id,
                                    z_exp_target, pose, x_can=x_can)
    packed = render(x, c, s, q, a, camera.scaled(0.5))
    hr = upsample(store, packed[:mcfg.fdim])
    image = np.clip(np.transpose(hr.value, (1, 2, 0)), 0.0, 1.0)
    p = transform_landmarks(store, store.value("mean.P0"),
                            store.value("mean.gammaP"), z_id,
                            z_exp_target, pose)
    return EditResult(image, p.value.copy(), d_id.value.copy())


def fit_expression_code(store, overlay, image, camera, pose,
                        iters=100, lr=1e-3):
    """Recover an expression code from an example image, identity fixed.

    Expression transfer helper: starts from the fitted expression code and
    optimizes only a fresh code copy against the target image, leaving both
    the checkpoint and the fit overlay untouched.
    """
    mcfg = ModelConfig.from_dict(store.meta["model"])
    gt_lr = L.downsample_area(image, 2)
    cam_lr = camera.scaled(0.5)
    z_id = overlay.value("fit.z_id").copy()
    work = ParamStore()
    work.add("edit.z_exp", overlay.value("fit.z_exp").copy())
    adam = AdamState()
    for it in range(1, iters + 1):
        store.zero_grads()
        work.zero_grads()
        frame = gaussian_frame(store, mcfg, z_id, work.leaf("edit.z_exp"),
                               pose)
        packed = render(frame["X"], frame["C"], frame["S"], frame["Q"],
                        frame["A"], cam_lr)
        loss = _photo_loss(store, mcfg.fdim, packed, image, gt_lr)
        _check_finite(loss, "expression", it)
        engine.backward(loss)
        adam_step(adam, work, lr, only=("edit.z_exp",))
    return work.value("edit.z_exp").copy()


def interpolate_codes(a, b, t):
    """Linear blend of two latent codes at parameter t in [0, 1]."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"interpolation parameter must be in [0, 1], got {t}")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"code shapes differ: {a.shape} vs {b.shape}")
    return (1.0 - t) * a + t * b
