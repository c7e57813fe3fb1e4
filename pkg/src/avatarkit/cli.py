"""Command-line entry point: dataset generation, precomputation, training, rendering, evaluation.

Heavy modules are imported inside the handlers so that ``--threads`` can set the
BLAS / numba thread environment before numpy is loaded.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

log = logging.getLogger("avatarkit")

THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS")


def _set_threads(n: int | None) -> None:
    if n is None:
        return
    if n < 1:
        raise SystemExit("--threads must be >= 1")
    for var in THREAD_VARS:
        os.environ[var] = str(n)


def _load_cfg(args):
    from dataclasses import replace

    from .config import Config, load_config
    cfg = load_config(args.config) if args.config else Config()
    if args.seed is not None:
        cfg = replace(cfg, scene=replace(cfg.scene, seed=args.seed), train=replace(cfg.train, seed=args.seed))
    return cfg


def _out(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _need(path, what: str) -> Path:
    if path is None:
        raise SystemExit(f"missing {what}: pass its path")
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"missing {what}: {p}")
    return p


def _lut(path):
    from .pbr import load_fglut
    return load_fglut(_need(path, "FG lookup table (run bake-fg-lut)"))


def _frames(scene, which: str) -> list[tuple[int, object]]:
    idx = {"train": scene.train_idx, "test": scene.test_idx}.get(which)
    idx = range(len(scene.frames)) if idx is None else idx
    return [(int(i), scene.frames[int(i)]) for i in idx]


def _save_image(stem: Path, img, mask=None) -> None:
    from PIL import Image

    from .envmap import write_pfm
    from .pbr import srgb_encode, to_uint8
    write_pfm(stem.with_suffix(".pfm"), img)
    Image.fromarray(to_uint8(srgb_encode(img))).save(stem.with_suffix(".png"))
    if mask is not None:
        Image.fromarray((mask * 255).astype("uint8")).save(stem.parent / f"{stem.name}_mask.png")


def _env(spec: str):
    from .envmap import load_env, procedural_env
    if Path(spec).exists():
        return load_env(spec)
    try:
        return procedural_env(spec, 64, 128)
    except ValueError:
        raise FileNotFoundError(f"environment {spec!r} is neither a file nor a procedural kind") from None


# -- commands ---------------------------------------------------------------------------

def cmd_gen_synthetic(args, cfg) -> None:
    from .scene import generate_scene, save_scene
    out = _out(args, "dataset")
    scene = generate_scene(cfg.scene)
    save_scene(scene, out)
    log.info("wrote %d frames (%d train / %d test) to %s", len(scene.frames), len(scene.train_idx),
             len(scene.test_idx), out)


def cmd_bake_fg_lut(args, cfg) -> None:
    from .pbr import bake_fg_lut, save_fglut
    from .pbr.fglut import check_lut
    out = _out(args, ".")
    seed = args.seed if args.seed is not None else 0
    lut = bake_fg_lut((cfg.lut.rows, cfg.lut.cols), cfg.lut.samples, seed)
    check_lut(lut)
    save_fglut(out / "fglut.bin", lut)
    log.info("baked %dx%d FG lookup table to %s", cfg.lut.rows, cfg.lut.cols, out / "fglut.bin")


def cmd_prefilter_env(args, cfg) -> None:
    from .pbr import prefilter_env, save_prefiltered
    out = _out(args, "prefiltered")
    env = _env(args.env)
    p = cfg.prefilter
    pf = prefilter_env(env, p.levels, (p.height, p.width), p.samples)
    save_prefiltered(out, pf)
    log.info("wrote %d pre-filtered levels to %s", len(pf.roughness), out)


def cmd_fit_light(args, cfg) -> None:
    import numpy as np

    from .lightnn import fit_light, make_light_net
    from .nnkit import save_checkpoint
    from .pbr import load_prefiltered
    out = _out(args, ".")
    pf = load_prefiltered(_need(args.prefiltered, "pre-filtered environment directory"))
    net = make_light_net(np.random.default_rng(cfg.train.seed), cfg.train.light_hidden)
    f = cfg.light_fit
    rep = fit_light(net, pf, f.pairs, f.iterations, f.lr, cfg.train.seed, f.heldout)
    save_checkpoint(out / "light.flrw", {f"light/{i}": p.data for i, p in enumerate(net.parameters())})
    print(f"held-out relative L2 {rep.heldout_rel_l2:.4f} after {rep.iterations} iterations")


def cmd_train(args, cfg) -> None:
    from .experiments import run_two_stage
    from .metrics import write_metrics_csv
    from .nnkit import load_checkpoint
    from .pbr import LutLight, load_prefiltered
    from .model import AvatarModel
    from .scene import load_scene
    from .train import evaluate_model, train_stage1, train_stage2
    scene = load_scene(_need(args.dataset, "dataset directory"))
    out = _out(args, "run")
    lut = _lut(args.lut)
    lut_light = LutLight(load_prefiltered(args.prefiltered)) if args.prefiltered else None
    tc = cfg.train
    if args.ablations:
        res = run_two_stage(scene, tc, lut, out, ablations=True)
        write_metrics_csv(out / "summary.csv", [res])
        for k, v in res.items():
            print(f"{k},{v:.6g}")
        return
    model = AvatarModel.create(scene.rig, tc)
    if args.light_init:
        snap = model.snapshot()
        snap.update({k: v for k, v in load_checkpoint(_need(args.light_init, "light checkpoint")).items()
                     if k.startswith("light/")})
        model.restore(snap)
    s1 = train_stage1(model, scene, tc, lut, out, lut_light)
    s2 = train_stage2(model, scene, tc, lut, out, lut_light, reg_scale=s1.reg_scale)
    light = lut_light if tc.light == "lut" else model.neural_light()
    m = evaluate_model(model, scene, scene.test_frames(), light, lut)
    m.update(stage1_seconds=s1.seconds, stage2_seconds=s2.seconds)
    write_metrics_csv(out / "summary.csv", [m])
    for k, v in m.items():
        print(f"{k},{v:.6g}")


def _model(args, scene):
    from .model import AvatarModel
    return AvatarModel.load(_need(args.model, "model checkpoint"), scene.rig)


def cmd_render(args, cfg) -> None:
    from .scene import load_scene
    from .render import render_frame
    scene = load_scene(_need(args.dataset, "dataset directory"))
    out = _out(args, "renders")
    model, lut = _model(args, scene), _lut(args.lut)
    if args.prefiltered:
        from .pbr import LutLight, load_prefiltered
        light = LutLight(load_prefiltered(args.prefiltered))
    else:
        light = model.neural_light()
    for i, fr in _frames(scene, args.frames):
        img, mask = render_frame(model, fr.pose, fr.camera, light, lut)
        _save_image(out / f"{i:04d}", img, mask)
    log.info("rendered %s frames to %s", args.frames, out)


def cmd_relight(args, cfg) -> None:
    from .scene import load_scene
    from .render import relight
    scene = load_scene(_need(args.dataset, "dataset directory"))
    out = _out(args, "relit")
    model, lut = _model(args, scene), _lut(args.lut)
    env = _env(args.env)
    for i, fr in _frames(scene, args.frames):
        img, mask = relight(model, fr.pose, fr.camera, env, lut, cfg.prefilter)
        _save_image(out / f"{i:04d}", img, mask)
    log.info("relit %s frames to %s", args.frames, out)


def cmd_metrics(args, cfg) -> None:
    import numpy as np

    from .envmap import read_pfm
    from .metrics import image_metrics, to_display, write_metrics_csv
    from .scene import load_scene
    scene = load_scene(_need(args.dataset, "dataset directory"))
    out = _out(args, ".")
    renders = _need(args.renders, "render directory")
    rows = []
    for i, fr in _frames(scene, args.frames):
        pred = read_pfm(_need(renders / f"{i:04d}.pfm", f"render of frame {i}"))
        m = image_metrics(to_display(pred), to_display(fr.image), fr.mask)
        rows.append({"frame": i, **m})
    write_metrics_csv(out / "metrics.csv", rows)
    for k in ("l1", "psnr", "ssim"):
        vals = [r[k] for r in rows if k in r]
        if vals:
            print(f"{k},{np.mean(vals):.6g}")


def cmd_eval_normals(args, cfg) -> None:
    import numpy as np

    from .metrics import normal_similarity, write_metrics_csv
    from .render import predicted_gbuffer
    from .scene import gt_gbuffer, load_scene
    scene = load_scene(_need(args.dataset, "dataset directory"))
    out = _out(args, ".")
    model = _model(args, scene)
    rows = []
    for i, fr in _frames(scene, args.frames):
        pred = predicted_gbuffer(model, fr.pose, fr.camera)
        gt = gt_gbuffer(scene.cfg, scene.rig, scene.gt_mesh, scene.gt_fields, fr.pose, fr.camera)
        c = normal_similarity(pred, gt)
        rows.append({"frame": i} if c is None else {"frame": i, "normal_cos": c})
    write_metrics_csv(out / "normals.csv", rows)
    vals = [r["normal_cos"] for r in rows if "normal_cos" in r]
    print(f"normal_cos,{np.mean(vals):.6g}" if vals else "normal_cos,absent")


# -- parser -----------------------------------------------------------------------------

def _globals(defaults: bool) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    d = (lambda v: v) if defaults else (lambda v: argparse.SUPPRESS)
    p.add_argument("--config", default=d(None), help="TOML config file")
    p.add_argument("--seed", type=int, default=d(None), help="override scene and training seeds")
    p.add_argument("--out", default=d(None), help="output directory")
    p.add_argument("--threads", type=int, default=d(None), help="BLAS / numba thread count")
    p.add_argument("-v", "--verbose", action="store_true", default=d(False))
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="avatarkit", parents=[_globals(True)],
                                     description="Relightable mesh avatars on synthetic scenes.")
    sub = parser.add_subparsers(dest="command", required=True)
    g = _globals(False)

    def add(name, fn, help_):
        sp = sub.add_parser(name, parents=[g], help=help_)
        sp.set_defaults(fn=fn)
        return sp

    def data_args(sp, model=True):
        sp.add_argument("--dataset", required=True)
        if model:
            sp.add_argument("--model", required=True, help="checkpoint written by train (stage2.flrw)")
        sp.add_argument("--frames", choices=("train", "test", "all"), default="test")

    add("gen-synthetic", cmd_gen_synthetic, "render a synthetic dataset with the reference integrator")
    add("bake-fg-lut", cmd_bake_fg_lut, "bake the split-sum FG lookup table")
    sp = add("prefilter-env", cmd_prefilter_env, "pre-filter an environment map into roughness levels")
    sp.add_argument("--env", required=True, help="PFM/HDR file or procedural kind (studio, sky, sunset, constant)")
    sp = add("fit-light", cmd_fit_light, "fit the lighting MLP to a pre-filtered environment")
    sp.add_argument("--prefiltered", required=True)
    sp = add("train", cmd_train, "two-stage training")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--lut", required=True)
    sp.add_argument("--prefiltered", help="pre-filtered env for light = 'lut'")
    sp.add_argument("--light-init", help="initial lighting weights from fit-light")
    sp.add_argument("--ablations", action="store_true", help="also run the encoding and upsampling ablations")
    sp = add("render", cmd_render, "render frames with the learned assets")
    data_args(sp)
    sp.add_argument("--lut", required=True)
    sp.add_argument("--prefiltered", help="use a pre-filtered env instead of the neural light")
    sp = add("relight", cmd_relight, "render frames under a new environment")
    data_args(sp)
    sp.add_argument("--lut", required=True)
    sp.add_argument("--env", required=True)
    sp = add("metrics", cmd_metrics, "masked L1 / PSNR / SSIM of rendered PFMs against a dataset")
    data_args(sp, model=False)
    sp.add_argument("--renders", required=True)
    sp = add("eval-normals", cmd_eval_normals, "cosine similarity of predicted and ground-truth normals")
    data_args(sp)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _set_threads(args.threads)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    cfg = _load_cfg(args)
    if args.threads is not None:
        try:
            import numba
            numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
        except ImportError:
            pass
    try:
        args.fn(args, cfg)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
