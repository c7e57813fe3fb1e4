"""End-to-end experiments on synthetic scenes: the two-stage run with its
encoding and upsampling ablations, material recovery and relighting checks."""
from __future__ import annotations

import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import PrefilterConfig, SceneConfig, TrainConfig
from .model import AvatarModel
from .nnkit import Tensor, no_grad
from .pbr import BrdfConfig, FgLut, LutLight, prefilter_env, shade_splitsum
from .render import forward_frame, render_frame
from .scene import FrameRecord, SyntheticScene, generate_scene, gt_gbuffer, gt_material
from .train import evaluate_model, train_stage1, train_stage2

log = logging.getLogger(__name__)


def _prefixed(prefix: str, d: dict) -> dict:
    return {f"{prefix}_{k}": v for k, v in d.items()}


def run_two_stage(scene: SyntheticScene, cfg: TrainConfig, lut: FgLut, out_dir=None,
                  ablations: bool = True) -> dict[str, float]:
    """Main stage-1 + stage-2 run plus the hash-from-scratch and no-upsampling stage-1 ablations.

    Metrics are evaluated on the held-out frames with the learned neural light.
    """
    out = Path(out_dir) if out_dir else None
    test = scene.test_frames()
    res: dict[str, float] = {}

    model = AvatarModel.create(scene.rig, cfg)
    s1 = train_stage1(model, scene, cfg, lut, out_dir=out and out / "main")
    res.update(_prefixed("stage1", evaluate_model(model, scene, test, model.neural_light(), lut)))
    s2 = train_stage2(model, scene, cfg, lut, out_dir=out and out / "main", reg_scale=s1.reg_scale)
    res.update(_prefixed("stage2", evaluate_model(model, scene, test, model.neural_light(), lut)))
    res["stage1_final_loss"] = s1.history[-1].total if s1.history else float("nan")
    res["stage2_final_loss"] = s2.history[-1].total if s2.history else float("nan")
    res["seconds_main"] = s1.seconds + s2.seconds
    log.info("main run: %s", {k: round(v, 4) for k, v in res.items() if isinstance(v, float)})
    if not ablations:
        return res

    hcfg = replace(cfg, stage1_encoding=cfg.stage2_encoding)
    hmodel = AvatarModel.create(scene.rig, hcfg)
    h = train_stage1(hmodel, scene, hcfg, lut, out_dir=out and out / "hash_scratch")
    res.update(_prefixed("hash_scratch", evaluate_model(hmodel, scene, test, hmodel.neural_light(), lut)))
    res["seconds_hash_scratch"] = h.seconds

    ncfg = replace(cfg, upsample=False)
    nmodel = AvatarModel.create(scene.rig, ncfg)
    n = train_stage1(nmodel, scene, ncfg, lut, out_dir=out and out / "no_upsample")
    res.update(_prefixed("no_upsample", evaluate_model(nmodel, scene, test, nmodel.neural_light(), lut)))
    res["seconds_no_upsample"] = n.seconds
    return res


def head_experiment(scene_cfg: SceneConfig, cfg: TrainConfig, lut: FgLut, out_dir=None,
                    ablations: bool = True) -> dict[str, float]:
    scene = generate_scene(scene_cfg)
    return run_two_stage(scene, cfg, lut, out_dir, ablations)


def material_recovery(scene: SyntheticScene, cfg: TrainConfig, lut: FgLut,
                      prefilter: PrefilterConfig | None = None) -> dict[str, np.ndarray]:
    """Train the material under the known pre-filtered scene light with frozen geometry.

    Returns the recovered albedo, roughness and specular intensity at the covered
    pixels of the last frame.
    """
    p = prefilter or PrefilterConfig()
    light = LutLight(prefilter_env(scene.env, p.levels, (p.height, p.width), p.samples))
    cfg = replace(cfg, light="lut", train_geometry=False, train_deform=False, train_light=False,
                  upsample=False)
    model = AvatarModel.create(scene.rig, cfg)
    train_stage1(model, scene, cfg, lut, lut_light=light)
    fr = scene.frames[-1]
    with no_grad():
        o = forward_frame(model, fr.pose, fr.camera, light, lut)
    return {"rho": o.rho.data, "r": o.r.data, "k": o.k.data}


def relight_consistency(model: AvatarModel, scene: SyntheticScene, lut: FgLut,
                        prefilter: PrefilterConfig | None = None) -> np.ndarray:
    """Per-pixel relative difference between the neural-light render and the render
    with the training environment substituted through its pre-filtered levels."""
    p = prefilter or PrefilterConfig()
    pf = LutLight(prefilter_env(scene.env, p.levels, (p.height, p.width), p.samples))
    errs = []
    for fr in scene.test_frames():
        a, m = render_frame(model, fr.pose, fr.camera, model.neural_light(), lut)
        b, _ = render_frame(model, fr.pose, fr.camera, pf, lut)
        errs.append(np.linalg.norm(a[m] - b[m], axis=-1) / np.maximum(np.linalg.norm(b[m], axis=-1), 1e-6))
    return np.concatenate(errs) if errs else np.zeros(0)


def gt_splitsum_frame(scene: SyntheticScene, frame: FrameRecord, light, lut: FgLut) -> np.ndarray:
    """Split-sum render of the ground-truth geometry and materials (no networks)."""
    gb = gt_gbuffer(scene.cfg, scene.rig, scene.gt_mesh, scene.gt_fields, frame.pose, frame.camera)
    flat, _ = gb.covered()
    img = np.zeros(gb.shape + (3,))
    if len(flat) == 0:
        return img
    x_d = gb.x_d.reshape(-1, 3)[flat]
    w_o = frame.camera.center - x_d
    w_o /= np.linalg.norm(w_o, axis=1, keepdims=True)
    mat, labels = gt_material(scene.cfg, gb.x_c.reshape(-1, 3)[flat])
    with no_grad():
        out = shade_splitsum(Tensor(mat.rho), Tensor(mat.r), Tensor(mat.k), Tensor(gb.n_d.reshape(-1, 3)[flat]),
                             Tensor(w_o), light, lut, BrdfConfig().f0_for_labels(labels))
    img.reshape(-1, 3)[flat] = out.rgb.data
    return img
