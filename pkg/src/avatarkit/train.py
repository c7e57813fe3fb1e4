"""Two-stage inverse-rendering trainer and evaluation helpers."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .losses import (
    LossCsv, LossReport, LossWeights, loss_flame_reg, loss_laplacian, loss_light_white, loss_mask,
    loss_normal_consistency, loss_pyramid, loss_rgb_log, loss_smooth, loss_stat_reg, total_loss,
)
from .metrics import image_metrics, normal_similarity, to_display
from .model import AvatarModel, make_material_net
from .nnkit import Adam, Tensor, ad, no_grad
from .pbr import FgLut
from .render import forward_frame, predicted_gbuffer, render_frame
from .scene import FrameRecord, SyntheticScene, gt_gbuffer

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, msg: str, checkpoint: Path | None):
        super().__init__(msg)
        self.checkpoint = checkpoint


@dataclass
class StageResult:
    history: list[LossReport] = field(default_factory=list)
    reg_scale: float = 1.0
    seconds: float = 0.0
    upsampled_at: int | None = None


def warmup_deform(model: AvatarModel, iterations: int, lr: float = 1e-3, weights: LossWeights | None = None) -> float:
    """Fit the deformation net to the pseudo ground-truth fields at the canonical vertices."""
    w = weights or LossWeights()
    v = model.canonical().data
    pseudo = model.pseudo_fields(v)
    opt = Adam()
    opt.add_group("deform", model.deform_net.parameters(), lr)
    val = float("nan")
    for _ in range(iterations):
        opt.zero_grad()
        split = model.fields(Tensor(v))
        loss = loss_flame_reg(*split, pseudo, w.lambda_e, w.lambda_p, w.lambda_w)
        loss.backward()
        opt.step()
        val = float(loss.data)
    return val


def _light_for(model: AvatarModel, cfg: TrainConfig, lut_light):
    if cfg.light == "neural":
        return model.neural_light()
    if lut_light is None:
        raise ValueError("light='lut' needs a pre-filtered environment light")
    return lut_light


def batch_loss(model: AvatarModel, frames: list[FrameRecord], light, lut: FgLut, cfg: TrainConfig,
               rng: np.random.Generator, reg_scale: float, train_deform: bool, train_geometry: bool,
               iteration: int = 0) -> tuple[Tensor, LossReport]:
    w = cfg.weights
    v_c = model.canonical()
    if train_deform:
        E, P, W = model.fields(v_c)
    else:
        with no_grad():
            E, P, W = model.fields(v_c)
    geom = (v_c, E, P, W)
    inv_b = 1.0 / len(frames)
    acc: dict[str, Tensor] = {}

    def add(name, t):
        acc[name] = acc[name] + t * inv_b if name in acc else t * inv_b
    smooth_pts = None
    for fr in frames:
        out = forward_frame(model, fr.pose, fr.camera, light, lut, geom)
        add("mask", loss_mask(out.mask, fr.mask))
        add("vgg", loss_pyramid(out.image(), fr.image))
        if len(out.flat) == 0:
            continue
        sel = np.flatnonzero(fr.mask.ravel()[out.flat])
        if len(sel):
            add("rgb", loss_rgb_log(ad.take_rows(out.rgb, sel), fr.image.reshape(-1, 3)[out.flat[sel]]))
        add("rough", loss_stat_reg(out.r, w.mu_rough, w.sigma_rough))
        add("spec", loss_stat_reg(out.k, w.mu_spec, w.sigma_spec))
        if cfg.light == "neural":
            add("light", loss_light_white(out.shade.diffuse))
        if smooth_pts is None:
            n = min(cfg.smooth_batch, len(out.x_c))
            smooth_pts = out.x_c[rng.choice(len(out.x_c), n, replace=False)]
    if smooth_pts is not None and w.smooth > 0:
        acc["smooth"] = loss_smooth(model.material, smooth_pts, cfg.smooth_sigma, rng)
    if train_deform:
        acc["flame"] = loss_flame_reg(E, P, W, model.pseudo_fields(v_c.data), w.lambda_e, w.lambda_p, w.lambda_w)
    if train_geometry:
        # reg_scale multiplies the mesh regularisers after upsampling
        acc["laplacian"] = loss_laplacian(v_c, model.adjacency.laplacian_matrix()) * reg_scale
        acc["normal"] = loss_normal_consistency(v_c, model.faces, model.adjacency.face_pairs) * reg_scale
    return total_loss(acc, w, iteration)


def _run_stage(model: AvatarModel, scene: SyntheticScene, cfg: TrainConfig, lut: FgLut, iterations: int,
               opt: Adam, stage: str, seed: int, out_dir: Path | None, lut_light, train_deform: bool,
               train_geometry: bool, upsample_at: int | None = None, reg_scale: float = 1.0,
               geometry_from: int = 0) -> StageResult:
    light = _light_for(model, cfg, lut_light)
    rng = np.random.default_rng(seed)
    train = scene.train_frames()
    res = StageResult(reg_scale=reg_scale)
    csv = LossCsv(out_dir / f"loss_{stage}.csv") if out_dir else None
    last_good = model.snapshot()
    t0 = time.perf_counter()
    base_lr = {k: g.lr for k, g in opt.groups.items()}
    try:
        for it in range(iterations):
            decay = cfg.lr_final_factor ** (it / max(iterations - 1, 1))
            for k, g in opt.groups.items():
                g.lr = base_lr[k] * decay
            if train_geometry and it == geometry_from and "vertex" in opt.groups:
                opt.groups["vertex"].frozen = False
            if upsample_at is not None and it == upsample_at:
                model.upsample()
                g = opt.groups["vertex"]
                opt.add_group("vertex", [model.offsets], g.lr * cfg.upsample_lr_factor).frozen = g.frozen
                base_lr["vertex"] *= cfg.upsample_lr_factor
                res.reg_scale *= cfg.upsample_reg_factor
                res.upsampled_at = it
                last_good = model.snapshot()
            idx = rng.choice(len(train), min(cfg.batch_size, len(train)), replace=False)
            opt.zero_grad()
            try:
                total, rep = batch_loss(model, [train[i] for i in idx], light, lut, cfg, rng, res.reg_scale,
                                        train_deform, train_geometry, it)
                ok = np.isfinite(total.data)
            except FloatingPointError:
                ok = False
            if not ok:
                model.restore(last_good)
                ck = None
                if out_dir:
                    ck = out_dir / f"{stage}_last_good.flrw"
                    model.save(ck, cfg)
                raise TrainingDiverged(f"{stage}: non-finite loss at iteration {it}", ck)
            total.backward()
            opt.step()
            last_good = model.snapshot()
            res.history.append(rep)
            if csv:
                csv.write(rep)
            if cfg.log_every and it % cfg.log_every == 0:
                log.info("%s it %d total %.5f rgb %.5f", stage, it, rep.total, rep.terms.get("rgb", 0.0))
            if out_dir and cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
                model.save(out_dir / f"{stage}_{it + 1:06d}.flrw", cfg)
    finally:
        if csv:
            csv.close()
    res.seconds = time.perf_counter() - t0
    if out_dir:
        model.save(out_dir / f"{stage}.flrw", cfg)
    return res


def train_stage1(model: AvatarModel, scene: SyntheticScene, cfg: TrainConfig, lut: FgLut,
                 out_dir=None, lut_light=None, iterations: int | None = None) -> StageResult:
    """Joint optimisation of offsets, deformation, frequency-encoded material and light."""
    n = cfg.stage1_iterations if iterations is None else iterations
    out_dir = Path(out_dir) if out_dir else None
    if cfg.train_deform and cfg.deform_warmup_iterations > 0 and n > 0:
        warmup_deform(model, cfg.deform_warmup_iterations, cfg.lr_deform, cfg.weights)
    delay = int(round(cfg.geometry_delay * n))
    opt = Adam()
    opt.add_group("vertex", [model.offsets], cfg.lr_vertex).frozen = not cfg.train_geometry or delay > 0
    opt.add_group("deform", model.deform_net.parameters(), cfg.lr_deform).frozen = not cfg.train_deform
    opt.add_group("material", model.material_net.parameters(), cfg.lr_material)
    opt.add_group("light", model.light_net.parameters(), cfg.lr_light).frozen = not (cfg.train_light and cfg.light == "neural")
    up = None
    if cfg.upsample and cfg.train_geometry and n > 0:
        up = int(round(cfg.upsample_fraction * n))
    return _run_stage(model, scene, cfg, lut, n, opt, "stage1", cfg.seed + 11, out_dir, lut_light,
                      cfg.train_deform, cfg.train_geometry, upsample_at=up, geometry_from=delay)


def train_stage2(model: AvatarModel, scene: SyntheticScene, cfg: TrainConfig, lut: FgLut, out_dir=None,
                 lut_light=None, reg_scale: float = 1.0, iterations: int | None = None) -> StageResult:
    """Hash-grid material re-initialised; deformation frozen; tiny vertex rate; light re-optimised."""
    n = cfg.stage2_iterations if iterations is None else iterations
    out_dir = Path(out_dir) if out_dir else None
    model.material_net = make_material_net(cfg.stage2_encoding, cfg, np.random.default_rng(cfg.seed + 2))
    model.material_encoding = cfg.stage2_encoding
    opt = Adam()
    opt.add_group("vertex", [model.offsets], cfg.lr_vertex_stage2).frozen = not cfg.train_geometry
    opt.add_group("material", model.material_net.parameters(), cfg.lr_material)
    opt.add_group("light", model.light_net.parameters(), cfg.lr_light).frozen = not (cfg.train_light and cfg.light == "neural")
    return _run_stage(model, scene, cfg, lut, n, opt, "stage2", cfg.seed + 22, out_dir, lut_light,
                      train_deform=False, train_geometry=cfg.train_geometry, reg_scale=reg_scale)


# -- evaluation -------------------------------------------------------------------------

def evaluate_model(model: AvatarModel, scene: SyntheticScene, frames: list[FrameRecord], light, lut: FgLut
                   ) -> dict[str, float]:
    """Mean masked display-space metrics and GT-normal similarity over frames.

    ``psnr`` uses the ground-truth mask; ``psnr_overlap`` only pixels covered by both
    masks (separates shading error from silhouette error); ``mask_err`` is the
    fraction of pixels whose coverage disagrees."""
    rows = []
    for fr in frames:
        img, mask = render_frame(model, fr.pose, fr.camera, light, lut)
        m = image_metrics(to_display(img), to_display(fr.image), fr.mask)
        both = image_metrics(to_display(img), to_display(fr.image), fr.mask & mask)
        m["psnr_overlap"] = both.get("psnr")
        m["mask_err"] = float(np.mean(mask != fr.mask))
        gb_pred = predicted_gbuffer(model, fr.pose, fr.camera)
        gb_gt = gt_gbuffer(scene.cfg, scene.rig, scene.gt_mesh, scene.gt_fields, fr.pose, fr.camera)
        m["normal_cos"] = normal_similarity(gb_pred, gb_gt)
        rows.append(m)
    keys = rows[0].keys() if rows else []
    return {k: float(np.mean([r[k] for r in rows if r.get(k) is not None])) for k in keys}
