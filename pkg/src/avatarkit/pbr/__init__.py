"""Physically based shading: BRDF terms, split-sum tables, pre-filtering and a
Monte-Carlo reference integrator."""
from .brdf import R_MIN, BrdfConfig, MaterialSample, fresnel_schlick, ggx_ndf, reflect, smith_g, smith_g1
from .color import srgb_decode, srgb_encode, to_uint8
from .fglut import FgLut, FgLutError, bake_fg_lut, load_fglut, save_fglut
from .prefilter import DEFAULT_LEVELS, PrefilteredEnv, load_prefiltered, prefilter_env, save_prefiltered
from .reference import reference_render_sphere, reference_shade, sphere_gbuffer
from .shading import LutLight, ShadeResult, shade_splitsum, shade_splitsum_np

__all__ = [
    "R_MIN", "BrdfConfig", "MaterialSample", "fresnel_schlick", "ggx_ndf", "reflect", "smith_g", "smith_g1",
    "srgb_decode", "srgb_encode", "to_uint8", "FgLut", "FgLutError", "bake_fg_lut", "load_fglut", "save_fglut",
    "DEFAULT_LEVELS", "PrefilteredEnv", "load_prefiltered", "prefilter_env", "save_prefiltered",
    "reference_render_sphere", "reference_shade", "sphere_gbuffer", "LutLight", "ShadeResult",
    "shade_splitsum", "shade_splitsum_np",
]
