"""Acceptance gate: nine end-to-end properties, one pass/fail line each.

Each test prints exactly one ``[criterion N] name: PASS/FAIL (...)`` line
with its measurements. The heavy fixtures (default corpus, both training
stages, the fits) are session-scoped and shared; criteria 1-3 run without
them. Budgets below are tuned so the full chain fits a desktop-CPU hour.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines live.
"""

import os
import subprocess
import sys
import time

import numpy as np
import pytest

from headsplat.diffcore import ParamStore, engine, finite_diff_check
from headsplat.guidegeo import build_lattice, marching_tets, marching_tets_backward
from headsplat.guidegeo.surface import init_sdf_net, eval_sdf_field
from headsplat.losses import psnr
from headsplat import losses as L
from headsplat.morphcore import (
    HeadPose,
    ModelConfig,
    gaussian_frame,
    init_attribute_net,
    init_mean_model,
    init_shared_nets,
    init_upsampler,
    upsample,
)
from headsplat.pipeline import (
    TrainConfig,
    fit_image,
    edit_expression,
    migrate_guide,
    naive_gaussian_store,
    train_gaussian,
    train_guide,
)
from headsplat.pipeline import fit as fitmod
from headsplat.splatcore import Camera, oracle_rasterize, rasterize, render
from headsplat.synthdata import generate_corpus, load_manifest, load_view, samples_for

# Training budgets for the end-to-end fixtures. Chosen so corpus generation,
# both stages, migration, and the downstream fits complete in under an hour
# on one desktop core while still reaching the documented quality ordering.
STAGE1 = dict(steps=2000, lattice_res=32, batch=4, seed=0)
STAGE2 = dict(steps=2600, batch=4, seed=0)
ABLATION_STEPS = 150
ABLATION_SEEDS = (1, 2, 3)
GRAD_SEEDS = 20

RUNTIMES = {}


def report(num, name, ok, details):
    line = f"[criterion {num}] {name}: {'PASS' if ok else 'FAIL'} ({details})"
    print(line)
    return line


# ---------------------------------------------------------------------------
# session fixtures: corpus -> stage 1 -> migrate -> stage 2 -> fits


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("acceptance") / "corpus")
    t0 = time.perf_counter()
    generate_corpus(out, seed=0, n_id=8, n_exp=5, n_views=12, resolution=64,
                    n_holdout=2)
    RUNTIMES["corpus"] = time.perf_counter() - t0
    return out


@pytest.fixture(scope="session")
def manifest(corpus_dir):
    return load_manifest(corpus_dir)


@pytest.fixture(scope="session")
def stage1(corpus_dir, tmp_path_factory):
    out = str(tmp_path_factory.mktemp("stage1"))
    t0 = time.perf_counter()
    ckpt, csv_path = train_guide(corpus_dir, out, TrainConfig(stage="guide",
                                                              **STAGE1))
    RUNTIMES["stage1"] = time.perf_counter() - t0
    return {"ckpt": ckpt, "csv": csv_path, "meta": ParamStore.load(ckpt).meta}


@pytest.fixture(scope="session")
def gaussian_init(stage1, tmp_path_factory):
    out = str(tmp_path_factory.mktemp("migrate") / "init.ckpt")
    t0 = time.perf_counter()
    path, n_points = migrate_guide(stage1["ckpt"], out)
    RUNTIMES["migrate"] = time.perf_counter() - t0
    return {"ckpt": path, "n_points": n_points}


@pytest.fixture(scope="session")
def stage2(gaussian_init, corpus_dir, tmp_path_factory):
    out = str(tmp_path_factory.mktemp("stage2"))
    t0 = time.perf_counter()
    ckpt, csv_path = train_gaussian(corpus_dir, out,
                                    TrainConfig(stage="gaussian", **STAGE2),
                                    gaussian_init["ckpt"])
    RUNTIMES["stage2"] = time.perf_counter() - t0
    return {"ckpt": ckpt, "csv": csv_path, "meta": ParamStore.load(ckpt).meta}


@pytest.fixture(scope="session")
def stage2_store(stage2):
    return ParamStore.load(stage2["ckpt"])


@pytest.fixture(scope="session")
def fit_holdout(stage2_store, corpus_dir, manifest):
    sample = samples_for(manifest, "holdout")[0]
    view = load_view(corpus_dir, sample)
    fit = fit_image(stage2_store, view["image"], view["camera"], view["pose"])
    return {"fit": fit, "view": view, "sample": sample}


@pytest.fixture(scope="session")
def fit_train(stage2_store, corpus_dir, manifest):
    sample = next(s for s in samples_for(manifest, "train")
                  if s["id"] == 0 and s["exp"] == 0 and s["view"] == 0)
    view = load_view(corpus_dir, sample)
    fit = fit_image(stage2_store, view["image"], view["camera"], view["pose"])
    return {"fit": fit, "view": view, "sample": sample}


# ---------------------------------------------------------------------------
# criterion 1: finite-difference gradient suite


def _random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def _raster_case(seed):
    """Rasterizer scene with every nonsmooth branch kept at a safe margin.

    Footprints much larger than the frame keep all pixels far inside the
    Mahalanobis cutoff; opacity <= 0.69 over 6 splats keeps transmittance
    well above the termination threshold before the last splat.
    """
    rng = np.random.default_rng(1000 + seed)
    n = 6
    cam = Camera(30.0, 30.0, 12.0, 12.0, np.eye(3), np.zeros(3), 24, 24)
    store = ParamStore()
    pos = rng.normal(scale=0.3, size=(n, 3))
    pos[:, 2] = rng.uniform(1.5, 3.0, size=n)
    quat = rng.normal(size=(n, 4))
    quat /= np.linalg.norm(quat, axis=1, keepdims=True)
    store.add("splat.pos", pos)
    store.add("splat.color", rng.uniform(0.0, 1.0, size=(n, 3)))
    store.add("splat.logscale", rng.uniform(np.log(3.5), np.log(5.0), (n, 3)))
    store.add("splat.quat", quat)
    store.add("splat.logit", rng.uniform(-1.0, 0.8, size=n))
    w = engine.constant(rng.normal(size=(4, 24, 24)))

    def loss():
        packed = render(store.leaf("splat.pos"), store.leaf("splat.color"),
                        store.leaf("splat.logscale"), store.leaf("splat.quat"),
                        store.leaf("splat.logit"), cam)
        return engine.vsum(packed * w)

    return store, loss


def _heads_case(seed):
    """One graph touching every network head plus the mean-model leaves."""
    rng = np.random.default_rng(2000 + seed)
    mcfg = ModelConfig(fdim=4, d_id=4, d_exp=3, inj_hidden=(8,),
                       id_hidden=(8,), exp_hidden=(8,), col_hidden=(8,),
                       att_hidden=(8,), n_landmarks=4)
    store = ParamStore()
    init_shared_nets(store, mcfg, rng)
    init_attribute_net(store, mcfg, rng)
    init_upsampler(store, mcfg.fdim, rng)
    init_sdf_net(store, mcfg.fdim, rng, hidden=(8,))
    n = 6
    init_mean_model(store, mcfg, rng.normal(scale=0.3, size=(n, 3)),
                    0.3 * rng.normal(size=(n, mcfg.fdim)),
                    0.3 * rng.normal(size=(mcfg.n_landmarks, 3)))
    store.add("z.id", 0.2 * rng.normal(size=mcfg.d_id))
    store.add("z.exp", 0.2 * rng.normal(size=mcfg.d_exp))
    store.add("ups.in", 0.3 * rng.normal(size=(mcfg.fdim, 6, 6)))
    # The zero-initialized offset heads make upstream gradients vanish at
    # the warm-start point; probing there measures only float64 noise.
    # Jitter every parameter so all paths carry live gradients.
    for name in store.names():
        v = store.value(name)
        store.set_value(name, v + 0.05 * rng.normal(size=v.shape))
    pose = HeadPose(_random_rotation(rng), rng.normal(scale=0.2, size=3))
    pts = rng.uniform(-0.8, 0.8, size=(5, 3))
    wf = {k: engine.constant(rng.normal(size=shape)) for k, shape in
          (("X", (n, 3)), ("C", (n, mcfg.fdim)), ("S", (n, 3)),
           ("Q", (n, 4)), ("A", (n,)), ("P", (mcfg.n_landmarks, 3)),
           ("delta_id", (n, 3)), ("delta_exp", (n, 3)))}
    wu = engine.constant(rng.normal(size=(3, 12, 12)))
    ws = engine.constant(rng.normal(size=5))
    wg = engine.constant(rng.normal(size=(5, mcfg.fdim)))

    def loss():
        frame = gaussian_frame(store, mcfg, store.leaf("z.id"),
                               store.leaf("z.exp"), pose)
        total = engine.constant(0.0)
        for k, w in wf.items():
            total = total + engine.vsum(frame[k] * w)
        total = total + engine.vsum(upsample(store, store.leaf("ups.in")) * wu)
        s, gamma = eval_sdf_field(store, pts)
        return total + engine.vsum(s * ws) + engine.vsum(gamma * wg)

    return store, loss


def _offset_from(rng, base, low, high):
    """A constant target at a guaranteed margin from ``base`` everywhere."""
    return base + np.sign(rng.normal(size=base.shape)) * rng.uniform(
        low, high, size=base.shape)


def _loss_cases(seed):
    """Each loss term driven by leaf parameters, kinks kept off the probes."""
    rng = np.random.default_rng(3000 + seed)
    cases = []

    s = ParamStore()
    pred = s.add("pred", rng.uniform(0.2, 0.8, size=(6, 6, 3)))
    gt = _offset_from(rng, pred.copy(), 0.1, 0.3)
    cases.append(("photometric", s,
                  lambda s=s, gt=gt: L.photometric_l1(s.leaf("pred"), gt)))

    s = ParamStore()
    feat = s.add("feat", rng.uniform(0.2, 0.8, size=(6, 6, 5)))
    gt = _offset_from(rng, feat[:, :, :3].copy(), 0.1, 0.3)
    cases.append(("lowres", s,
                  lambda s=s, gt=gt: L.lowres_rgb_loss(s.leaf("feat"), gt)))

    s = ParamStore()
    s.add("alpha", rng.uniform(0.2, 0.8, size=(8, 8)))
    mask = (rng.uniform(size=(8, 8)) > 0.5).astype(np.float64)
    cases.append(("silhouette", s,
                  lambda s=s, mask=mask: L.silhouette_loss(s.leaf("alpha"),
                                                           mask)))

    s = ParamStore()
    p = s.add("lmk", rng.normal(scale=0.4, size=(5, 3)))
    gt = _offset_from(rng, p.copy(), 0.2, 0.4)
    cases.append(("landmark", s,
                  lambda s=s, gt=gt: L.landmark_loss(s.leaf("lmk"), gt)))

    s = ParamStore()
    for name in ("d1", "d2"):
        d = rng.normal(scale=0.2, size=(6, 3))
        norms = np.linalg.norm(d, axis=1, keepdims=True)
        s.add(name, d * np.maximum(1.0, 0.08 / np.maximum(norms, 1e-12)))
    cases.append(("displacement", s,
                  lambda s=s: L.displacement_reg(s.leaf("d1"), s.leaf("d2"))))

    s = ParamStore()
    s.add("verts", np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0],
                             [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
          + 0.2 * rng.normal(size=(4, 3)))
    faces = np.array([[0, 1, 2], [0, 2, 3], [0, 3, 1], [1, 3, 2]])
    from headsplat.guidegeo import laplacian_loss
    cases.append(("laplacian", s,
                  lambda s=s, faces=faces: laplacian_loss(s.leaf("verts"),
                                                          faces)))

    s = ParamStore()
    s.add("img", rng.uniform(0.0, 1.0, size=(16, 16, 3)))
    gt = rng.uniform(0.0, 1.0, size=(16, 16, 3))
    cases.append(("perceptual", s,
                  lambda s=s, gt=gt: L.perceptual_loss(s.leaf("img"), gt)))

    return cases


def _tets_case(seed):
    """Mesh vertex positions and features as functions of the field values.

    Field magnitudes are clamped to 0.05 so no tetrahedron edge changes sign
    under the probe steps: the extraction topology is constant and the map
    from field values to vertices stays smooth.
    """
    rng = np.random.default_rng(4000 + seed)
    positions, tet_idx = build_lattice(6)
    axes = rng.uniform(0.45, 0.75, size=3)
    q = positions / axes
    s0 = (np.linalg.norm(q, axis=1) - 1.0) * float(np.mean(axes))
    s0 = s0 + 0.05 * rng.normal(size=s0.shape)
    s0 = np.sign(s0) * np.maximum(np.abs(s0), 0.05)
    gamma0 = 0.3 * rng.normal(size=(len(positions), 3))
    store = ParamStore()
    store.add("tet.sg", np.concatenate([s0[:, None], gamma0], axis=1))

    verts0, _, _, _ = marching_tets(s0, gamma0, positions, tet_idx)
    w = engine.constant(np.random.default_rng(5000 + seed)
                        .normal(size=(len(verts0), 6)))

    def loss():
        sg = store.leaf("tet.sg")
        vals = sg.value
        verts, feats, faces, bwd = marching_tets(vals[:, 0], vals[:, 1:],
                                                 positions, tet_idx)

        def vjp(g):
            ds, dgamma = marching_tets_backward(bwd, g[:, :3], g[:, 3:])
            return (np.concatenate([ds[:, None], dgamma], axis=1),)

        packed = engine.custom(np.concatenate([verts, feats], axis=1),
                               (sg,), vjp)
        return engine.vsum(packed * w)

    return store, loss


def test_criterion_1_gradient_suite():
    t0 = time.perf_counter()
    precisions = (
        {"label": "64-bit", "tolerance": 1e-6, "quantize": False,
         "h": {"raster": 3e-5, "heads": 1e-4, "losses": 1e-6, "tets": 1e-5}},
        {"label": "32-bit", "tolerance": 1e-3, "quantize": True,
         "h": {"raster": 1e-3, "heads": 1e-3, "losses": 1e-4, "tets": 1e-3}},
    )
    worst = {}
    for prec in precisions:
        for seed in range(GRAD_SEEDS):
            scenarios = [("raster",) + _raster_case(seed),
                         ("heads",) + _heads_case(seed),
                         ("tets",) + _tets_case(seed)]
            scenarios += [(f"losses/{name}", store, fn)
                          for name, store, fn in _loss_cases(seed)]
            for name, store, loss_fn in scenarios:
                if prec["quantize"]:
                    store.quantize()
                klass = name.split("/")[0]
                rep = finite_diff_check(loss_fn, store, h=prec["h"][klass],
                                        tolerance=prec["tolerance"],
                                        max_coords=4)
                key = (prec["label"], klass)
                block_worst = max(v["rel_err"] for k, v in rep.items()
                                  if k != "__all_ok__")
                worst[key] = max(worst.get(key, 0.0), block_worst)
    elapsed = time.perf_counter() - t0
    ok64 = all(v < 1e-6 for (lbl, _), v in worst.items() if lbl == "64-bit")
    ok32 = all(v < 1e-3 for (lbl, _), v in worst.items() if lbl == "32-bit")
    ok = ok64 and ok32 and elapsed < 300.0
    w64 = max(v for (lbl, _), v in worst.items() if lbl == "64-bit")
    w32 = max(v for (lbl, _), v in worst.items() if lbl == "32-bit")
    report(1, "gradient suite", ok,
           f"{GRAD_SEEDS} seeds/op-class, worst rel err {w64:.2e} @64-bit "
           f"(<1e-6), {w32:.2e} @32-bit (<1e-3), {elapsed:.0f}s (<300s)")
    assert ok, (worst, elapsed)


# ---------------------------------------------------------------------------
# criterion 2: tiled rasterizer vs oracle, permutation invariance


def test_criterion_2_oracle_equivalence():
    worst_oracle = 0.0
    worst_perm = 0.0
    for seed in range(100):
        rng = np.random.default_rng(6000 + seed)
        n = int(rng.integers(1, 129))
        cam = Camera(40.0, 40.0, 16.0, 16.0, np.eye(3), np.zeros(3), 32, 32)
        pos = rng.normal(scale=0.3, size=(n, 3))
        pos[:, 2] = rng.uniform(1.5, 3.0, size=n)
        if seed % 3 == 0 and n > 2:
            pos[:2, 2] = -rng.uniform(0.5, 1.0, size=2)  # behind the camera
        color = rng.uniform(0.0, 1.0, size=(n, 3))
        logscale = rng.uniform(np.log(0.02), np.log(0.08), size=(n, 3))
        quat = rng.normal(size=(n, 4))
        quat /= np.linalg.norm(quat, axis=1, keepdims=True)
        logit = rng.uniform(-1.0, 1.2, size=n)

        tiled = rasterize(pos, color, logscale, quat, logit, cam)
        oracle = oracle_rasterize(pos, color, logscale, quat, logit, cam)
        worst_oracle = max(worst_oracle,
                           float(np.abs(tiled.values - oracle.values).max()),
                           float(np.abs(tiled.alpha - oracle.alpha).max()))

        perm = rng.permutation(n)
        shuffled = rasterize(pos[perm], color[perm], logscale[perm],
                             quat[perm], logit[perm], cam)
        worst_perm = max(worst_perm,
                         float(np.abs(tiled.values - shuffled.values).max()),
                         float(np.abs(tiled.alpha - shuffled.alpha).max()))
    ok = worst_oracle <= 1e-5 and worst_perm <= 1e-6
    report(2, "oracle equivalence", ok,
           f"100 scenes: tiled-vs-oracle max {worst_oracle:.2e} (<=1e-5), "
           f"permutation max {worst_perm:.2e} (<=1e-6)")
    assert ok, (worst_oracle, worst_perm)


# ---------------------------------------------------------------------------
# criterion 3: isosurface extraction correctness


def test_criterion_3_isosurface():
    res = 21
    spacing = 2.0 / (res - 1)
    positions, tet_idx = build_lattice(res)
    gamma = np.zeros((len(positions), 1))

    radius = 0.57
    s = np.linalg.norm(positions, axis=1) - radius
    verts, _, faces, _ = marching_tets(s, gamma, positions, tet_idx)
    radii = np.linalg.norm(verts, axis=1)
    max_radius_err = float(np.abs(radii - radius).max())

    edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]],
                            faces[:, [2, 0]]])
    edges = np.unique(np.sort(edges, axis=1), axis=0)
    euler = len(verts) - len(edges) + len(faces)

    normal = np.array([0.3, -0.8, 0.52])
    s_lin = positions @ normal + 0.137
    verts_lin, _, _, _ = marching_tets(s_lin, gamma, positions, tet_idx)
    max_plane_err = float(np.abs(verts_lin @ normal + 0.137).max())

    ok = (max_radius_err <= spacing / 2.0 and euler == 2
          and max_plane_err <= 1e-6)
    report(3, "isosurface", ok,
           f"sphere radius err {max_radius_err:.4f} (<= {spacing / 2:.4f}), "
           f"Euler characteristic {euler} (== 2), "
           f"linear-field residual {max_plane_err:.2e} (<= 1e-6)")
    assert ok, (max_radius_err, euler, max_plane_err)


# ---------------------------------------------------------------------------
# criterion 4: end-to-end two-stage convergence on the default corpus


def _csv_totals(csv_path):
    totals = {}
    with open(csv_path) as f:
        next(f)
        for line in f:
            step, term, value = line.strip().split(",")
            if term == "total":
                totals[int(step)] = float(value)
    return totals


def test_criterion_4_end_to_end_convergence(stage1, stage2):
    totals = _csv_totals(stage1["csv"])
    last_step = max(totals)
    ratio = totals[100] / totals[last_step]
    psnr1 = stage1["meta"]["final_psnr"]
    psnr2 = stage2["meta"]["final_psnr"]
    runtime = sum(RUNTIMES[k] for k in ("corpus", "stage1", "migrate",
                                        "stage2"))
    ok = ratio >= 5.0 and psnr2 - psnr1 >= 2.0 and runtime < 3600.0
    report(4, "end-to-end convergence", ok,
           f"stage-1 total {totals[100]:.4f}@100 -> {totals[last_step]:.4f}"
           f"@{last_step}, ratio {ratio:.2f} (>=5); "
           f"PSNR stage-1 {psnr1:.2f} -> stage-2 {psnr2:.2f}, "
           f"delta {psnr2 - psnr1:+.2f} dB (>=+2); "
           f"runtime {runtime:.0f}s (<3600s)")
    assert ok, (ratio, psnr1, psnr2, runtime)


# ---------------------------------------------------------------------------
# criterion 5: migrated initialization beats a naive ellipsoid initialization


def test_criterion_5_initialization_ablation(corpus_dir, manifest,
                                             gaussian_init, tmp_path_factory):
    base = tmp_path_factory.mktemp("ablation")
    results = []
    for seed in ABLATION_SEEDS:
        cfg = TrainConfig(stage="gaussian", steps=ABLATION_STEPS, batch=4,
                          seed=seed)
        naive, _ = naive_gaussian_store(cfg, manifest,
                                        np.random.default_rng(seed),
                                        n_points=gaussian_init["n_points"])
        naive_path = str(base / f"naive_s{seed}.ckpt")
        naive.save(naive_path)

        mig_ckpt, _ = train_gaussian(corpus_dir, str(base / f"mig_{seed}"),
                                     cfg, gaussian_init["ckpt"])
        nai_ckpt, _ = train_gaussian(corpus_dir, str(base / f"nai_{seed}"),
                                     cfg, naive_path)
        results.append((seed,
                        ParamStore.load(mig_ckpt).meta["final_psnr"],
                        ParamStore.load(nai_ckpt).meta["final_psnr"]))
    ok = all(m >= n + 1.0 for _, m, n in results)
    detail = ", ".join(f"seed {s}: {m:.2f} vs {n:.2f} ({m - n:+.2f} dB)"
                       for s, m, n in results)
    report(5, "initialization ablation", ok,
           f"{ABLATION_STEPS} steps/arm, migrated vs naive: {detail}; "
           f"need >=+1 dB on 3/3")
    assert ok, results


# ---------------------------------------------------------------------------
# criterion 6: fitting protocol and holdout quality


def test_criterion_6_fitting(fit_holdout, fit_train, stage2_store):
    fit = fit_holdout["fit"]
    view = fit_holdout["view"]
    rows_p1 = [r for r in fit.losses if r[0] == 1]
    rows_p2 = [r for r in fit.losses if r[0] == 2]
    protocol_ok = (len(rows_p1) == 200 and len(rows_p2) == 100
                   and fitmod.PHASE1_ITERS == 200
                   and fitmod.PHASE2_ITERS == 100
                   and fitmod.PHASE1_LR == 1e-3 and fitmod.PHASE2_LR == 1e-4)

    recon = edit_expression(stage2_store, fit.overlay,
                            fit.overlay.value("fit.z_exp"),
                            view["camera"], view["pose"])
    holdout_psnr = float(psnr(recon.image, view["image"]))

    train_fit = fit_train["fit"]
    z_fit = train_fit.overlay.value("fit.z_id")
    z_ref = stage2_store.value("codes.id")[fit_train["sample"]["id"]]
    cosine = float(z_fit @ z_ref
                   / (np.linalg.norm(z_fit) * np.linalg.norm(z_ref)))

    ok = protocol_ok and holdout_psnr >= 25.0 and cosine > 0.9
    report(6, "fitting", ok,
           f"iterations 200+100 at lr 1e-3/1e-4: {protocol_ok}; "
           f"holdout input-view PSNR {holdout_psnr:.2f} dB (>=25); "
           f"training-sample identity-code cosine {cosine:.3f} (>0.9)")
    assert ok, (protocol_ok, holdout_psnr, cosine)


# ---------------------------------------------------------------------------
# criterion 7: identity displacement is expression-free, the rest is not


def test_criterion_7_disentanglement(stage2_store, manifest, corpus_dir):
    store = stage2_store
    mcfg = ModelConfig.from_dict(store.meta["model"])
    sample = samples_for(manifest, "train")[0]
    pose = load_view(corpus_dir, sample)["pose"]
    z_id = store.value("codes.id")[0]
    z_a = store.value("codes.exp")[0]
    z_b = z_a + 0.1

    frame_a = gaussian_frame(store, mcfg, z_id, z_a, pose)
    frame_b = gaussian_frame(store, mcfg, z_id, z_b, pose)
    bit_equal = np.array_equal(frame_a["delta_id"].value,
                               frame_b["delta_id"].value)
    changed = {k: not np.array_equal(frame_a[k].value, frame_b[k].value)
               for k in ("C", "S", "Q", "A")}
    ok = bit_equal and all(changed.values())
    report(7, "disentanglement", ok,
           f"identity displacement bit-identical under expression change: "
           f"{bit_equal}; color/scale/rotation/opacity respond: {changed}")
    assert ok, (bit_equal, changed)


# ---------------------------------------------------------------------------
# criterion 8: deterministic training is bit-reproducible


def _run_cli(args):
    proc = subprocess.run([sys.executable, "-m", "headsplat.cli"] + args,
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return proc


def _file_bytes(path):
    with open(path, "rb") as f:
        return f.read()


def test_criterion_8_determinism(corpus_dir, tmp_path_factory):
    base = tmp_path_factory.mktemp("determinism")
    guide_args = ["train", "--stage", "guide", "--data", corpus_dir,
                  "--steps", "40", "--seed", "3", "--deterministic",
                  "--set", "lattice_res=20", "--set", "sdf_pretrain_steps=80",
                  "--set", "batch=2"]
    for out in ("g1", "g2"):
        _run_cli(guide_args + ["--out", str(base / out)])

    init = str(base / "init.ckpt")
    _run_cli(["migrate", "--guide", str(base / "g1" / "guide.ckpt"),
              "--out", init])
    gaussian_args = ["train", "--stage", "gaussian", "--data", corpus_dir,
                     "--init", init, "--steps", "40", "--seed", "3",
                     "--deterministic", "--set", "batch=2"]
    for out in ("s1", "s2"):
        _run_cli(gaussian_args + ["--out", str(base / out)])

    pairs = [("g1", "g2", "guide.ckpt"), ("g1", "g2", "guide.ckpt.bin"),
             ("g1", "g2", "train_guide.csv"),
             ("s1", "s2", "gaussian.ckpt"), ("s1", "s2", "gaussian.ckpt.bin"),
             ("s1", "s2", "train_gaussian.csv")]
    same = {name: _file_bytes(str(base / a / name))
            == _file_bytes(str(base / b / name)) for a, b, name in pairs}
    ok = all(same.values())
    report(8, "determinism", ok,
           f"two seeded runs per stage, byte-identical artifacts: {same}")
    assert ok, same


# ---------------------------------------------------------------------------
# criterion 9: expression edit moves the jaw landmark the right way


def _canonical_landmarks(sample):
    R = np.array(sample["pose"]["R"])
    T = np.array(sample["pose"]["T"])
    return (np.array(sample["landmarks"]) - T) @ R


def test_criterion_9_expression_editing(fit_train, stage2_store, manifest):
    fit = fit_train["fit"]
    view = fit_train["view"]
    source = fit_train["sample"]
    jaw = manifest["landmark_names"].index("jaw")

    recon = edit_expression(stage2_store, fit.overlay,
                            fit.overlay.value("fit.z_exp"),
                            view["camera"], view["pose"])
    jaw_open = stage2_store.value("codes.exp")[1]
    edited = edit_expression(stage2_store, fit.overlay, jaw_open,
                             view["camera"], view["pose"])

    delta_id_equal = np.array_equal(edited.delta_id, recon.delta_id)

    # model displacement, mapped back into the canonical frame
    R = view["pose"].R
    delta_model = (edited.landmarks[jaw] - recon.landmarks[jaw]) @ R

    # synthetic ground truth: same identity, neutral vs jaw-open expression
    lm_by_exp = {}
    for s in manifest["samples"]:
        if s["split"] == "train" and s["id"] == source["id"] \
                and s["exp"] in (0, 1) and s["exp"] not in lm_by_exp:
            lm_by_exp[s["exp"]] = _canonical_landmarks(s)[jaw]
    delta_gt = lm_by_exp[1] - lm_by_exp[0]

    axis = int(np.argmax(np.abs(delta_gt)))
    sign_ok = (np.sign(delta_model[axis]) == np.sign(delta_gt[axis])
               and abs(delta_model[axis]) > 1e-4)
    ok = sign_ok and delta_id_equal
    report(9, "expression editing", ok,
           f"jaw landmark moved {delta_model[axis]:+.4f} along the dominant "
           f"axis (ground truth {delta_gt[axis]:+.4f}, axis {axis}); "
           f"identity displacement bit-identical: {delta_id_equal}")
    assert ok, (delta_model, delta_gt, delta_id_equal)
