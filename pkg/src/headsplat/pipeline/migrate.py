"""Guide-to-Gaussian migration.

Converts a trained guide checkpoint into the initialization for stage 2:
the extracted mean mesh vertices become the mean Gaussian positions, their
interpolated feature vectors become the per-point features, and every
network shared between the stages is copied weight-for-weight. The field
network is dropped; a fresh zero-initialized attribute head is added so
the Gaussian model starts exactly at the mean attributes.
"""

import numpy as np

from ..diffcore import ParamStore
from ..guidegeo import build_lattice, extract_guide_mesh, splat_scale_for_mesh
from ..guidegeo.surface import GUIDE_SPLAT_LOGIT
from ..morphcore import ModelConfig, init_attribute_net, init_mean_model

COPIED_PREFIXES = ("f_inj.", "f_id.", "f_exp.", "f_col.", "ups.", "codes.")

ATTRIBUTE_SEED_OFFSET = 7919


def migrate_guide(guide_path, out_path):
    """Build the gaussian-init checkpoint from a guide checkpoint.

    Deterministic: the same guide checkpoint always produces a bit-identical
    output. Returns (out_path, n_points).
    """
    guide = ParamStore.load(guide_path)
    meta = guide.meta
    if meta.get("stage") != "guide":
        raise ValueError(f"{guide_path}: expected a guide checkpoint, "
                         f"got stage {meta.get('stage')!r}")
    cfg = meta["config"]
    mcfg = ModelConfig.from_dict(meta["model"])

    positions, tet_idx = build_lattice(cfg["lattice_res"])
    mesh = extract_guide_mesh(guide, positions, tet_idx)
    if len(mesh.verts) < 4 or len(mesh.faces) == 0:
        raise RuntimeError("guide mesh is empty; the guide stage is "
                           "undertrained")

    store = ParamStore()
    for name in guide.names():
        if name.startswith(COPIED_PREFIXES):
            store.add(name, guide.value(name).copy())
    rng = np.random.default_rng(cfg["seed"] + ATTRIBUTE_SEED_OFFSET)
    init_attribute_net(store, mcfg, rng)
    # Start from the exact splat attributes the guide rendered with, so the
    # zero-initialized attribute head reproduces the guide render.
    s0 = np.full(3, splat_scale_for_mesh(mesh.verts, mesh.faces))
    init_mean_model(store, mcfg, mesh.verts, mesh.feats,
                    guide.value("mean.P0").copy(),
                    s0=s0, a0=GUIDE_SPLAT_LOGIT)
    store.set_value("mean.gammaP", guide.value("mean.gammaP").copy())

    store.meta = {"stage": "gaussian-init", "init": "guide-mesh",
                  "config": cfg, "model": mcfg.to_dict(),
                  "n_points": int(len(mesh.verts)),
                  "guide_final_psnr": meta.get("final_psnr")}
    store.save(out_path)
    return out_path, len(mesh.verts)
