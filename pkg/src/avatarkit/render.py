"""Deferred-shading forward pass: deform, rasterize, query materials at canonical
points, shade with split-sum lighting."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import PrefilterConfig
from .deform import PoseExpr
from .envmap import EnvMap
from .model import AvatarModel, vertex_normals_tensor
from .nnkit import Tensor, ad, no_grad
from .pbr import FgLut, LutLight, ShadeResult, prefilter_env, shade_splitsum
from .raster import GBuffer, PinholeCamera, interpolate, rasterize


@dataclass
class FrameOutput:
    gb: GBuffer
    flat: np.ndarray            # covered pixel indices (raster order)
    rgb: Tensor                 # (P, 3) linear radiance at covered pixels
    shade: ShadeResult | None
    rho: Tensor | None
    r: Tensor | None
    k: Tensor | None
    x_c: np.ndarray             # (P, 3) canonical points

    @property
    def mask(self) -> np.ndarray:
        return self.gb.mask

    def image(self) -> Tensor:
        """Full (H, W, 3) image with a black background; differentiable in rgb."""
        H, W = self.gb.shape
        return ad.reshape(ad.scatter_rows(self.rgb, self.flat, H * W), (H, W, 3))


def pixel_f0(model: AvatarModel, gb: GBuffer) -> np.ndarray:
    """F0 of the region of the dominant (largest barycentric) vertex of each covered pixel."""
    flat, fc = gb.covered()
    corner = np.argmax(gb.bary.reshape(-1, 3)[flat], axis=1)
    vid = model.faces[fc, corner]
    return model.vertex_f0()[vid]


def forward_frame(model: AvatarModel, pose: PoseExpr, cam: PinholeCamera, light, lut: FgLut,
                  geometry: tuple | None = None) -> FrameOutput:
    """One frame through the full pipeline; ``geometry`` = (v_c, E, P, W) may be shared across a batch."""
    if geometry is None:
        v_c = model.canonical()
        geometry = (v_c, *model.fields(v_c))
    v_c, E, P, W = geometry
    v_d = model.deform(v_c, E, P, W, pose)
    n_v = vertex_normals_tensor(v_d, model.faces)
    gb = rasterize(cam, v_d.data, v_c.data, n_v.data, model.faces)
    flat, _ = gb.covered()
    if len(flat) == 0:
        return FrameOutput(gb, flat, Tensor(np.zeros((0, 3))), None, None, None, None, np.zeros((0, 3)))
    x_c = gb.x_c.reshape(-1, 3)[flat]
    x_d = interpolate(gb, v_d)
    n = ad.normalize(interpolate(gb, n_v))
    w_o = ad.normalize(Tensor(cam.center) - x_d)
    rho, r, k = model.material(x_c)
    shade = shade_splitsum(rho, r, k, n, w_o, light, lut, pixel_f0(model, gb))
    return FrameOutput(gb, flat, shade.rgb, shade, rho, r, k, x_c)


def predicted_gbuffer(model: AvatarModel, pose: PoseExpr, cam: PinholeCamera) -> GBuffer:
    """G-buffer of the deformed model mesh (no shading)."""
    with no_grad():
        v_c = model.canonical()
        v_d = model.deform(v_c, *model.fields(v_c), pose)
        n_v = vertex_normals_tensor(v_d, model.faces)
    return rasterize(cam, v_d.data, v_c.data, n_v.data, model.faces)


def render_frame(model: AvatarModel, pose: PoseExpr, cam: PinholeCamera, light, lut: FgLut):
    """Linear image (H, W, 3) and coverage mask; tonemapping happens on export only."""
    if lut is None:
        raise FileNotFoundError("missing asset: FG lookup table")
    with no_grad():
        out = forward_frame(model, pose, cam, light, lut)
        img = np.zeros((cam.height * cam.width, 3))
        img[out.flat] = out.rgb.data
    return img.reshape(cam.height, cam.width, 3), out.mask.copy()


def relight(model: AvatarModel, pose: PoseExpr, cam: PinholeCamera, env: EnvMap, lut: FgLut,
            prefilter: PrefilterConfig | None = None):
    """Replace the neural light by the pre-filtered levels of a new environment."""
    p = prefilter or PrefilterConfig()
    pf = prefilter_env(env, p.levels, (p.height, p.width), p.samples)
    return render_frame(model, pose, cam, LutLight(pf), lut)
