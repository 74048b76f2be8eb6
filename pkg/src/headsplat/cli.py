"""Command-line front door: corpus generation, training, migration,
rendering, fitting, editing, evaluation.

Heavy imports happen inside the command handlers so that thread limits
(deterministic mode, HEADSPLAT_THREADS) are in place before numpy loads.

Exit codes: 0 success, 1 usage error, 2 runtime error. Errors go to stderr
as single lines prefixed ``error:``.
"""

import argparse
import json
import os
import sys


class UsageError(Exception):
    """Bad arguments or configuration."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _configure_threads(deterministic):
    """Pin BLAS thread counts; must run before numpy is imported."""
    n = "1" if deterministic else os.environ.get("HEADSPLAT_THREADS")
    if n is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
        os.environ[var] = n


def _echo_config(out_dir, command, payload):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{command.replace('-', '_')}_config.json")
    with open(path, "w") as f:
        json.dump({"command": command, **payload}, f, indent=1, sort_keys=True)
        f.write("\n")
    return path


def _load_json(path, what):
    try:
        with open(path) as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise UsageError(f"cannot read {what} from {path}: {e}")


def _load_camera(path):
    from .splatcore import Camera
    return Camera.from_dict(_load_json(path, "camera"))


def _load_pose(path):
    from .morphcore import HeadPose
    if path is None:
        import numpy as np
        return HeadPose(np.eye(3), np.zeros(3))
    return HeadPose.from_dict(_load_json(path, "pose"))


def _default_camera(resolution):
    from .splatcore import camera_ring
    from .synthdata.corpus import CAMERA_FOV_DEG, CAMERA_RADIUS
    return camera_ring((0.0, 0.0, 0.0), CAMERA_RADIUS, 1, [0.0],
                       CAMERA_FOV_DEG, resolution)[0]


def _load_checkpoint(path):
    from .diffcore import ParamStore
    try:
        return ParamStore.load(path)
    except (OSError, KeyError, ValueError) as e:
        raise UsageError(f"cannot load checkpoint {path}: {e}")


def _code_from(store, bank, index, code_file, width, what):
    import numpy as np
    if code_file is not None:
        code = np.asarray(_load_json(code_file, f"{what} code"),
                          dtype=np.float64)
        if code.shape != (width,):
            raise UsageError(f"{what} code must have {width} entries, "
                             f"got shape {code.shape}")
        return code
    if index is None:
        raise UsageError(f"pass --{what}-index or --{what}-code-file")
    codes = store.value(bank)
    if not 0 <= index < len(codes):
        raise UsageError(f"unknown {what} index {index} "
                         f"(checkpoint has {len(codes)})")
    return codes[index]


# ---------------------------------------------------------------- commands


def cmd_gen_data(args):
    from .synthdata import generate_corpus
    _echo_config(args.out, "gen-data",
                 {"seed": args.seed, "ids": args.ids, "exps": args.exps,
                  "views": args.views, "res": args.res,
                  "holdout": args.holdout, "out": args.out})
    generate_corpus(args.out, seed=args.seed, n_id=args.ids,
                    n_exp=args.exps, n_views=args.views,
                    resolution=args.res, n_holdout=args.holdout)
    print(os.path.join(args.out, "manifest.json"))
    return 0


def cmd_train(args):
    from .pipeline import TrainConfig, apply_overrides, train_gaussian, train_guide
    if args.stage == "gaussian" and not args.init:
        raise UsageError("--stage gaussian requires --init "
                         "(a migrated checkpoint)")
    kwargs = {"stage": args.stage, "seed": args.seed}
    if args.steps is not None:
        kwargs["steps"] = args.steps
    if args.deterministic is not None:
        kwargs["deterministic"] = args.deterministic
    try:
        cfg = TrainConfig(**kwargs)
        cfg = apply_overrides(cfg, dict(args.set or []))
    except ValueError as e:
        raise UsageError(str(e))
    _echo_config(args.out, "train", cfg.to_dict())
    if args.stage == "guide":
        ckpt, log = train_guide(args.data, args.out, cfg)
    else:
        ckpt, log = train_gaussian(args.data, args.out, cfg, args.init)
    from .diffcore import ParamStore
    meta = ParamStore.load(ckpt).meta
    print(ckpt)
    print(log)
    print(f"final_psnr={meta['final_psnr']:.4f}")
    return 0


def cmd_migrate(args):
    from .pipeline import migrate_guide
    if args.out.endswith(".ckpt"):
        out_path = args.out
        out_dir = os.path.dirname(args.out) or "."
    else:
        out_dir = args.out
        out_path = os.path.join(args.out, "gaussian_init.ckpt")
    os.makedirs(out_dir, exist_ok=True)
    _echo_config(out_dir, "migrate", {"guide": args.guide, "out": out_path})
    try:
        path, n = migrate_guide(args.guide, out_path)
    except ValueError as e:
        raise UsageError(str(e))
    print(path)
    print(f"n_points={n}")
    return 0


def cmd_render(args):
    import numpy as np

    from .morphcore import ModelConfig
    from .pipeline import render_rgb
    from .splatcore import save_png
    from . import losses as L

    store = _load_checkpoint(args.ckpt)
    meta = store.meta
    mcfg = ModelConfig.from_dict(meta["model"])
    os.makedirs(args.out, exist_ok=True)
    _echo_config(args.out, "render",
                 {k: v for k, v in vars(args).items() if k != "func"})

    surface = None
    if meta["stage"] == "guide":
        from .guidegeo import build_lattice
        from .pipeline.train import guide_surface
        pos, tets = build_lattice(meta["config"]["lattice_res"])
        surface = guide_surface(store, pos, tets)

    if args.grid:
        try:
            n_i, n_e = (int(x) for x in args.grid.lower().split("x"))
        except ValueError:
            raise UsageError(f"--grid expects IDSxEXPS, got {args.grid!r}")
        ids = store.value("codes.id")
        exps = store.value("codes.exp")
        if n_i > len(ids) or n_e > len(exps):
            raise UsageError(f"grid {n_i}x{n_e} exceeds code banks "
                             f"({len(ids)} ids, {len(exps)} exps)")
        camera = (_load_camera(args.camera_file) if args.camera_file
                  else _default_camera(args.res))
        pose = _load_pose(args.pose_file)
        for i in range(n_i):
            for j in range(n_e):
                img = render_rgb(store, meta, camera, pose, ids[i], exps[j],
                                 surface=surface)
                save_png(os.path.join(args.out, f"grid_{i}_{j}.png"), img)
        print(args.out)
        print(f"images={n_i * n_e}")
        return 0

    z_id = _code_from(store, "codes.id", args.id_index, args.id_code_file,
                      mcfg.d_id, "id")
    z_exp = _code_from(store, "codes.exp", args.exp_index,
                       args.exp_code_file, mcfg.d_exp, "exp")

    if args.data is not None:
        from .synthdata import load_manifest, load_view, samples_for
        manifest = load_manifest(args.data)
        match = [s for s in samples_for(manifest, "train")
                 if (s["id"], s["exp"], s["view"]) ==
                    (args.id_index, args.exp_index, args.view_index)]
        if not match:
            raise UsageError(f"no training sample (id={args.id_index}, "
                             f"exp={args.exp_index}, view={args.view_index})")
        view = load_view(args.data, match[0])
        camera, pose = view["camera"], view["pose"]
        img = render_rgb(store, meta, camera, pose, z_id, z_exp,
                         surface=surface)
        out_png = os.path.join(args.out, "render.png")
        save_png(out_png, img)
        print(out_png)
        print(f"psnr={L.psnr(img, view['image']):.4f}")
        return 0

    camera = (_load_camera(args.camera_file) if args.camera_file
              else _default_camera(args.res))
    pose = _load_pose(args.pose_file)
    img = render_rgb(store, meta, camera, pose, z_id, z_exp, surface=surface)
    out_png = os.path.join(args.out, "render.png")
    save_png(out_png, img)
    print(out_png)
    return 0


def cmd_fit(args):
    from . import losses as L
    from .pipeline import edit_expression, fit_image
    from .splatcore import load_png, save_png

    store = _load_checkpoint(args.ckpt)
    if "mean.X0" not in store:
        raise UsageError(f"{args.ckpt}: no Gaussian model in checkpoint; "
                         "fit needs a gaussian-stage checkpoint")
    image = load_png(args.image)
    camera = _load_camera(args.camera_file)
    if (camera.height, camera.width) != image.shape[:2]:
        raise UsageError(f"camera is {camera.width}x{camera.height} but "
                         f"image is {image.shape[1]}x{image.shape[0]}")
    pose = _load_pose(args.pose_file)
    os.makedirs(args.out, exist_ok=True)
    _echo_config(args.out, "fit",
                 {k: v for k, v in vars(args).items() if k != "func"})

    result = fit_image(store, image, camera, pose)
    result.overlay.meta["checkpoint"] = os.path.abspath(args.ckpt)
    overlay_path = os.path.join(args.out, "fit_overlay.ckpt")
    result.overlay.save(overlay_path)

    log_path = os.path.join(args.out, "fit_log.csv")
    with open(log_path, "w") as f:
        f.write("phase,iteration,loss\n")
        for phase, it, loss in result.losses:
            f.write(f"{phase},{it},{loss!r}\n")

    recon = edit_expression(store, result.overlay,
                            result.overlay.value("fit.z_exp"), camera, pose)
    save_png(os.path.join(args.out, "recon.png"), recon.image)
    print(overlay_path)
    print(f"iterations={len(result.losses)}")
    print(f"final_loss={result.losses[-1][2]:.6f}")
    print(f"psnr={L.psnr(recon.image, image):.4f}")
    return 0


def cmd_edit(args):
    import numpy as np

    from .morphcore import ModelConfig
    from .pipeline import edit_expression, fit_expression_code
    from .splatcore import Camera, load_png, save_png

    overlay = _load_checkpoint(args.fitted)
    if "fit.z_id" not in overlay:
        raise UsageError(f"{args.fitted}: not a fit overlay")
    ckpt_path = args.ckpt or overlay.meta.get("checkpoint")
    if not ckpt_path or not os.path.exists(ckpt_path):
        raise UsageError("pass --ckpt (overlay does not record a readable "
                         "checkpoint path)")
    store = _load_checkpoint(ckpt_path)
    mcfg = ModelConfig.from_dict(overlay.meta["model"])

    camera = (_load_camera(args.camera_file) if args.camera_file
              else Camera.from_dict(overlay.meta["camera"]))
    pose = (_load_pose(args.pose_file) if args.pose_file
            else _load_pose_dict(overlay.meta["pose"]))

    if args.exp_code_file:
        z_exp = np.asarray(_load_json(args.exp_code_file, "exp code"),
                           dtype=np.float64)
    elif args.target_image:
        target = load_png(args.target_image)
        t_cam = (_load_camera(args.target_camera_file)
                 if args.target_camera_file else camera)
        t_pose = (_load_pose(args.target_pose_file)
                  if args.target_pose_file else pose)
        if (t_cam.height, t_cam.width) != target.shape[:2]:
            raise UsageError("target camera resolution does not match "
                             "target image")
        z_exp = fit_expression_code(store, overlay, target, t_cam, t_pose)
    else:
        raise UsageError("pass --exp-code-file or --target-image")

    os.makedirs(args.out, exist_ok=True)
    _echo_config(args.out, "edit",
                 {k: v for k, v in vars(args).items() if k != "func"})
    result = edit_expression(store, overlay, z_exp, camera, pose)
    out_png = os.path.join(args.out, "edit.png")
    save_png(out_png, result.image)
    with open(os.path.join(args.out, "edit_landmarks.json"), "w") as f:
        json.dump({"landmarks": result.landmarks.tolist()}, f, indent=1)
        f.write("\n")
    print(out_png)
    return 0


def _load_pose_dict(d):
    from .morphcore import HeadPose
    return HeadPose.from_dict(d)


def cmd_eval(args):
    import numpy as np

    from . import losses as L
    from .pipeline import edit_expression, render_rgb
    from .synthdata import load_manifest, load_view, samples_for

    store = _load_checkpoint(args.ckpt)
    meta = store.meta
    manifest = load_manifest(args.data)
    samples = samples_for(manifest, args.split)
    if args.limit:
        samples = samples[:args.limit]

    overlay = None
    if args.split == "holdout" and not args.self_check:
        if not args.fitted:
            raise UsageError("holdout identities have no trained codes; "
                             "pass --fitted from a fit run")
        overlay = _load_checkpoint(args.fitted)

    surface = None
    if meta["stage"] == "guide" and not args.self_check:
        from .guidegeo import build_lattice
        from .pipeline.train import guide_surface
        pos, tets = build_lattice(meta["config"]["lattice_res"])
        surface = guide_surface(store, pos, tets)

    os.makedirs(args.out, exist_ok=True)
    _echo_config(args.out, "eval",
                 {k: v for k, v in vars(args).items() if k != "func"})
    rows = []
    for s in samples:
        view = load_view(args.data, s)
        if args.self_check:
            img = view["image"]
        elif overlay is not None:
            z_exp = store.value("codes.exp")[s["exp"]]
            img = edit_expression(store, overlay, z_exp, view["camera"],
                                  view["pose"]).image
        else:
            img = render_rgb(store, meta, view["camera"], view["pose"],
                             store.value("codes.id")[s["id"]],
                             store.value("codes.exp")[s["exp"]],
                             surface=surface)
        rows.append((f"{s['id']}_{s['exp']}_{s['view']}",
                     L.psnr(img, view["image"]),
                     L.ssim(img, view["image"])))

    csv_path = os.path.join(args.out, "eval.csv")
    with open(csv_path, "w") as f:
        f.write("sample,psnr,ssim\n")
        for name, p, s_ in rows:
            f.write(f"{name},{p!r},{s_!r}\n")
    finite = [p for _, p, _ in rows if np.isfinite(p)]
    print(csv_path)
    print(f"mean_psnr={np.mean(finite) if finite else float('inf'):.4f}")
    print(f"mean_ssim={np.mean([s_ for _, _, s_ in rows]):.6f}")
    return 0


# ------------------------------------------------------------------ parser


def _kv(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    k, v = text.split("=", 1)
    return k, v


def build_parser():
    p = _Parser(prog="headsplat",
                description="Parametric Gaussian-splat head model tools")
    sub = p.add_subparsers(dest="command", required=True,
                           parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate the synthetic corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--ids", type=int, default=8)
    g.add_argument("--exps", type=int, default=5)
    g.add_argument("--views", type=int, default=12)
    g.add_argument("--res", type=int, default=64)
    g.add_argument("--holdout", type=int, default=2)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one stage")
    t.add_argument("--stage", choices=("guide", "gaussian"), required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--init", help="migrated checkpoint (gaussian stage)")
    t.add_argument("--steps", type=int, default=None)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--deterministic", action=argparse.BooleanOptionalAction,
                   default=None)
    t.add_argument("--set", action="append", type=_kv, metavar="KEY=VALUE",
                   help="dotted-key config override, e.g. weights.lap=50")
    t.set_defaults(func=cmd_train)

    m = sub.add_parser("migrate", help="guide checkpoint -> gaussian init")
    m.add_argument("--guide", required=True)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_migrate)

    r = sub.add_parser("render", help="render from a checkpoint")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--id-index", type=int)
    r.add_argument("--id-code-file")
    r.add_argument("--exp-index", type=int)
    r.add_argument("--exp-code-file")
    r.add_argument("--camera-file")
    r.add_argument("--pose-file")
    r.add_argument("--res", type=int, default=64,
                   help="default-camera resolution")
    r.add_argument("--data", help="corpus dir for ground-truth comparison")
    r.add_argument("--view-index", type=int, default=0)
    r.add_argument("--grid", help="IDSxEXPS identity/expression grid")
    r.set_defaults(func=cmd_render)

    f = sub.add_parser("fit", help="invert a single image")
    f.add_argument("--ckpt", required=True)
    f.add_argument("--image", required=True)
    f.add_argument("--camera-file", required=True)
    f.add_argument("--pose-file")
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("edit", help="re-render a fit with a new expression")
    e.add_argument("--fitted", required=True)
    e.add_argument("--ckpt", help="checkpoint (default: recorded in overlay)")
    e.add_argument("--exp-code-file")
    e.add_argument("--target-image")
    e.add_argument("--target-camera-file")
    e.add_argument("--target-pose-file")
    e.add_argument("--camera-file")
    e.add_argument("--pose-file")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_edit)

    v = sub.add_parser("eval", help="PSNR/SSIM table over a corpus split")
    v.add_argument("--ckpt", required=True)
    v.add_argument("--data", required=True)
    v.add_argument("--split", choices=("train", "holdout"), default="train")
    v.add_argument("--out", required=True)
    v.add_argument("--limit", type=int, default=0,
                   help="evaluate only the first N samples")
    v.add_argument("--fitted", help="fit overlay for holdout evaluation")
    v.add_argument("--self-check", action="store_true",
                   help="score ground truth against itself")
    v.set_defaults(func=cmd_eval)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    _configure_threads(bool(getattr(args, "deterministic", False)))
    try:
        return args.func(args) or 0
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
