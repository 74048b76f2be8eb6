"""Two-stage training: guide geometry first, then the Gaussian model.

Stage 1 optimizes the mean SDF field, the shared deformation/color networks,
the upsampler, the latent code banks, and the landmark table against the
mesh-based render. Stage 2 starts from the migrated initialization and
optimizes the full Gaussian model. Both stages share the image-term wiring:
feature rendering happens at half resolution, the upsampler produces the
full-resolution RGB prediction.
"""

import csv
import os

import numpy as np

from .. import losses as L
from ..diffcore import AdamState, ParamStore, adam_step, engine
from ..guidegeo import (
    build_lattice,
    extract_surface_vars,
    init_sdf_net,
    laplacian_loss,
    pretrain_sdf,
    render_guide,
    vertex_adjacency,
)
from ..morphcore import (
    ModelConfig,
    apply_pose_points,
    compute_color,
    deform_canonical,
    gaussian_frame,
    init_attribute_net,
    init_mean_model,
    init_shared_nets,
    init_upsampler,
    inject_identity,
    transform_landmarks,
    upsample,
)
from ..splatcore import render
from ..synthdata import load_manifest, load_view, samples_for
from .config import TrainConfig

GUIDE_TRAINED = ("codes.", "f_mean.", "f_inj.", "f_id.", "f_exp.", "f_col.",
                 "ups.", "mean.P0", "mean.gammaP")
GAUSSIAN_TRAINED = ("codes.", "f_inj.", "f_id.", "f_exp.", "f_col.", "f_att.",
                    "ups.", "mean.")

PROBE_LIMIT = 24


def canonical_landmark_mean(manifest):
    """Dataset-mean landmarks in the canonical (pose-removed) frame."""
    seen = {}
    for s in samples_for(manifest, "train"):
        key = (s["id"], s["exp"])
        if key in seen:
            continue
        R = np.array(s["pose"]["R"])
        T = np.array(s["pose"]["T"])
        seen[key] = (np.array(s["landmarks"]) - T) @ R
    return np.mean(list(seen.values()), axis=0)


def model_config_for(cfg: TrainConfig, manifest) -> ModelConfig:
    return ModelConfig(fdim=cfg.fdim, d_id=cfg.d_id, d_exp=cfg.d_exp,
                       n_landmarks=len(manifest["landmark_names"]))


def init_guide_store(cfg: TrainConfig, manifest, rng):
    """Fresh stage-1 parameter set: SDF field, nets, upsampler, codes, P0."""
    store = ParamStore()
    mcfg = model_config_for(cfg, manifest)
    init_sdf_net(store, cfg.fdim, rng)
    init_shared_nets(store, mcfg, rng)
    init_upsampler(store, cfg.fdim, rng)
    store.add("codes.id", 0.01 * rng.normal(size=(manifest["n_id"], cfg.d_id)))
    store.add("codes.exp", 0.01 * rng.normal(size=(manifest["n_exp"],
                                                   cfg.d_exp)))
    store.add("mean.P0", canonical_landmark_mean(manifest))
    # Exact zeros stall: with the offset heads zero-initialized too, no
    # gradient separates the landmark rows. Small noise breaks the tie.
    store.add("mean.gammaP",
              0.01 * rng.normal(size=(mcfg.n_landmarks, cfg.fdim)))
    return store, mcfg


def naive_gaussian_store(cfg: TrainConfig, manifest, rng, n_points,
                         axes=(0.62, 0.78, 0.68)):
    """Ablation baseline: ellipsoid-sampled points, zero features, fresh nets.

    Mirrors the structure of a migrated checkpoint without any knowledge
    from the guide stage.
    """
    store = ParamStore()
    mcfg = model_config_for(cfg, manifest)
    init_shared_nets(store, mcfg, rng)
    init_attribute_net(store, mcfg, rng)
    init_upsampler(store, cfg.fdim, rng)
    store.add("codes.id", 0.01 * rng.normal(size=(manifest["n_id"], cfg.d_id)))
    store.add("codes.exp", 0.01 * rng.normal(size=(manifest["n_exp"],
                                                   cfg.d_exp)))
    i = np.arange(n_points) + 0.5
    y = 1.0 - 2.0 * i / n_points
    r = np.sqrt(1.0 - y * y)
    th = np.pi * (1 + 5 ** 0.5) * i
    pts = np.stack([r * np.cos(th), y, r * np.sin(th)], axis=1) * np.asarray(axes)
    init_mean_model(store, mcfg, pts, np.zeros((n_points, cfg.fdim)),
                    canonical_landmark_mean(manifest))
    store.set_value("mean.gammaP",
                    0.01 * rng.normal(size=(mcfg.n_landmarks, cfg.fdim)))
    store.meta = {"stage": "gaussian-init", "init": "naive-ellipsoid",
                  "model": mcfg.to_dict(), "n_points": int(n_points)}
    return store, mcfg


def load_views(corpus_dir, samples):
    """Materialize samples with cached low-res ground truth."""
    views = []
    for s in samples:
        v = load_view(corpus_dir, s)
        v["gt_lr"] = L.downsample_area(v["image"], 2)
        v["mask_lr"] = L.binarize_mask(L.downsample_area(v["mask"], 2), 0.5)
        views.append(v)
    return views


def guide_surface(store, lattice_positions, tet_idx):
    """Differentiable mean-mesh extraction shared by a step's batch."""
    packed, faces = extract_surface_vars(store, lattice_positions, tet_idx)
    if packed.value.shape[0] < 4:
        raise RuntimeError("guide mesh is empty; SDF undertrained")
    return packed[:, :3], packed[:, 3:], faces


def _image_terms(store, fdim, packed, view):
    """Shared hr/lr terms plus the soft alpha map and hr prediction."""
    feat = packed[:fdim]
    alpha = packed[fdim]
    hr = engine.transpose(upsample(store, feat), (1, 2, 0))
    feat_hwc = engine.transpose(feat, (1, 2, 0))
    terms = {"hr": L.photometric_l1(hr, view["image"]),
             "lr": L.lowres_rgb_loss(feat_hwc, view["gt_lr"])}
    return terms, alpha, hr


def guide_view_terms(store, mcfg, verts, gamma, faces, view, z_id, z_exp,
                     adjacency=None):
    """All stage-1 loss terms for one view."""
    h = inject_identity(store, z_id, gamma)
    x_can, d_id, d_exp = deform_canonical(store, verts, h, z_exp)
    c = compute_color(store, h, z_exp)
    x_world = apply_pose_points(x_can, view["pose"])
    packed = render_guide(x_world, c, faces, view["camera"].scaled(0.5))
    terms, alpha, _ = _image_terms(store, mcfg.fdim, packed, view)
    p = transform_landmarks(store, store.leaf("mean.P0"),
                            store.leaf("mean.gammaP"), z_id, z_exp,
                            view["pose"])
    terms["sil"] = L.silhouette_loss(alpha, view["mask_lr"])
    terms["lmk"] = L.landmark_loss(p, view["landmarks"])
    terms["reg"] = L.displacement_reg(d_id, d_exp)
    terms["lap"] = laplacian_loss(x_can, faces, adjacency=adjacency)
    return terms


def gaussian_view_terms(store, mcfg, view, z_id, z_exp):
    """All stage-2 loss terms for one view."""
    frame = gaussian_frame(store, mcfg, z_id, z_exp, view["pose"])
    packed = render(frame["X"], frame["C"], frame["S"], frame["Q"],
                    frame["A"], view["camera"].scaled(0.5))
    terms, _, hr = _image_terms(store, mcfg.fdim, packed, view)
    terms["vgg"] = L.perceptual_loss(hr, view["image"])
    terms["lmk"] = L.landmark_loss(frame["P"], view["landmarks"])
    terms["reg"] = L.displacement_reg(frame["delta_id"], frame["delta_exp"])
    return terms


def render_rgb(store, meta, camera, pose, z_id, z_exp, surface=None):
    """Forward render to a full-resolution RGB array for any checkpoint."""
    mcfg = ModelConfig.from_dict(meta["model"])
    if meta["stage"] == "guide":
        if surface is None:
            pos, tets = build_lattice(meta["config"]["lattice_res"])
            surface = guide_surface(store, pos, tets)
        verts, gamma, faces = surface
        h = inject_identity(store, z_id, gamma)
        x_can, _, _ = deform_canonical(store, verts, h, z_exp)
        c = compute_color(store, h, z_exp)
        x_world = apply_pose_points(x_can, pose)
        packed = render_guide(x_world, c, faces, camera.scaled(0.5))
    else:
        frame = gaussian_frame(store, mcfg, z_id, z_exp, pose)
        packed = render(frame["X"], frame["C"], frame["S"], frame["Q"],
                        frame["A"], camera.scaled(0.5))
    hr = upsample(store, packed[:mcfg.fdim])
    return np.clip(np.transpose(hr.value, (1, 2, 0)), 0.0, 1.0)


def probe_samples(samples, limit=PROBE_LIMIT):
    stride = max(1, len(samples) // limit)
    return samples[::stride][:limit]


def eval_probe_psnr(store, meta, corpus_dir, manifest, samples):
    """Per-view PSNR of full renders against ground truth, keyed id_exp_view."""
    surface = None
    if meta["stage"] == "guide":
        pos, tets = build_lattice(meta["config"]["lattice_res"])
        surface = guide_surface(store, pos, tets)
    out = {}
    for s in samples:
        view = load_view(corpus_dir, s)
        z_id = store.value("codes.id")[s["id"]]
        z_exp = store.value("codes.exp")[s["exp"]]
        img = render_rgb(store, meta, view["camera"], view["pose"],
                         z_id, z_exp, surface=surface)
        out[f"{s['id']}_{s['exp']}_{s['view']}"] = L.psnr(img, view["image"])
    return out


class TrainLog:
    """Long-format CSV log: one (step, term, value) row per term per step."""

    def __init__(self, path):
        self.path = path
        self._f = open(path, "w", newline="")
        self._w = csv.writer(self._f)
        self._w.writerow(["step", "term", "value"])

    def write(self, step, terms):
        for name, value in terms.items():
            self._w.writerow([step, name, repr(float(value))])
        self._f.flush()

    def close(self):
        self._f.close()


def _save_checkpoint(store, path, stage, cfg, mcfg, extra=None):
    store.meta = {"stage": stage, "config": cfg.to_dict(),
                  "model": mcfg.to_dict()}
    if extra:
        store.meta.update(extra)
    store.save(path)
    return path


def train_guide(corpus_dir, out_dir, cfg: TrainConfig):
    """Stage 1. Returns (checkpoint path, csv path)."""
    manifest = load_manifest(corpus_dir)
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    store, mcfg = init_guide_store(cfg, manifest, rng)
    if cfg.sdf_pretrain_steps:
        pretrain_sdf(store, rng, steps=cfg.sdf_pretrain_steps)

    lattice_pos, tet_idx = build_lattice(cfg.lattice_res)
    samples = samples_for(manifest, "train")
    views = load_views(corpus_dir, samples)
    adam = AdamState()
    log = TrainLog(os.path.join(out_dir, "train_guide.csv"))
    try:
        for step in range(1, cfg.steps + 1):
            batch = rng.choice(len(views), size=min(cfg.batch, len(views)),
                               replace=False)
            store.zero_grads()
            verts, gamma, faces = guide_surface(store, lattice_pos, tet_idx)
            adjacency = vertex_adjacency(faces, verts.value.shape[0])
            codes_id = store.leaf("codes.id")
            codes_exp = store.leaf("codes.exp")
            total = None
            term_sums = {}
            for k in batch:
                view = views[k]
                terms = guide_view_terms(store, mcfg, verts, gamma, faces,
                                         view, codes_id[view["id"]],
                                         codes_exp[view["exp"]],
                                         adjacency=adjacency)
                t = L.total_guide_loss(terms, cfg.weights)
                total = t if total is None else total + t
                for name, v in terms.items():
                    term_sums[name] = term_sums.get(name, 0.0) + float(v.value)
            total = total / len(batch)
            if not np.isfinite(total.value):
                raise RuntimeError(f"guide training diverged at step {step}")
            engine.backward(total)
            adam_step(adam, store, cfg.lr_nets,
                      lr_overrides={"codes.": cfg.lr_codes,
                                    "mean.": cfg.lr_mean},
                      only=GUIDE_TRAINED)
            row = {k: v / len(batch) for k, v in term_sums.items()}
            row["total"] = float(total.value)
            log.write(step, row)
    finally:
        log.close()

    probes = eval_probe_psnr(store, {"stage": "guide",
                                     "config": cfg.to_dict(),
                                     "model": mcfg.to_dict()},
                             corpus_dir, manifest, probe_samples(samples))
    finite = [v for v in probes.values() if np.isfinite(v)]
    path = _save_checkpoint(
        store, os.path.join(out_dir, "guide.ckpt"), "guide", cfg, mcfg,
        extra={"probe_psnr": probes,
               "final_psnr": float(np.mean(finite)) if finite else 0.0,
               "corpus_seed": manifest["seed"]})
    return path, log.path


def train_gaussian(corpus_dir, out_dir, cfg: TrainConfig, init_path):
    """Stage 2 from a gaussian-init checkpoint. Returns (ckpt path, csv path)."""
    manifest = load_manifest(corpus_dir)
    os.makedirs(out_dir, exist_ok=True)
    store = ParamStore.load(init_path)
    if "mean.X0" not in store:
        raise ValueError(f"{init_path}: not a gaussian initialization "
                         "(run migrate first)")
    mcfg = ModelConfig.from_dict(store.meta["model"])
    n_points = len(store.value("mean.X0"))
    rng = np.random.default_rng(cfg.seed)
    samples = samples_for(manifest, "train")
    views = load_views(corpus_dir, samples)
    adam = AdamState()
    log = TrainLog(os.path.join(out_dir, "train_gaussian.csv"))
    try:
        for step in range(1, cfg.steps + 1):
            batch = rng.choice(len(views), size=min(cfg.batch, len(views)),
                               replace=False)
            store.zero_grads()
            codes_id = store.leaf("codes.id")
            codes_exp = store.leaf("codes.exp")
            total = None
            term_sums = {}
            for k in batch:
                view = views[k]
                terms = gaussian_view_terms(store, mcfg, view,
                                            codes_id[view["id"]],
                                            codes_exp[view["exp"]])
                t = L.total_gaussian_loss(terms, cfg.weights)
                total = t if total is None else total + t
                for name, v in terms.items():
                    term_sums[name] = term_sums.get(name, 0.0) + float(v.value)
            total = total / len(batch)
            if not np.isfinite(total.value):
                raise RuntimeError(f"gaussian training diverged at step {step}")
            engine.backward(total)
            adam_step(adam, store, cfg.lr_nets,
                      lr_overrides={"codes.": cfg.lr_codes,
                                    "mean.": cfg.lr_mean},
                      only=GAUSSIAN_TRAINED)
            assert len(store.value("mean.X0")) == n_points
            row = {k: v / len(batch) for k, v in term_sums.items()}
            row["total"] = float(total.value)
            log.write(step, row)
    finally:
        log.close()

    probes = eval_probe_psnr(store, {"stage": "gaussian",
                                     "model": mcfg.to_dict()},
                             corpus_dir, manifest, probe_samples(samples))
    finite = [v for v in probes.values() if np.isfinite(v)]
    path = _save_checkpoint(
        store, os.path.join(out_dir, "gaussian.ckpt"), "gaussian", cfg, mcfg,
        extra={"probe_psnr": probes,
               "final_psnr": float(np.mean(finite)) if finite else 0.0,
               "n_points": int(n_points),
               "corpus_seed": manifest["seed"]})
    return path, log.path
