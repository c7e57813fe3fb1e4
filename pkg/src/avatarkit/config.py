"""Dataclass configs and their TOML round trip."""
from __future__ import annotations

import dataclasses
import sys
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .losses import LossWeights

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import tomli_w


@dataclass
class RegionMaterial:
    rho: tuple[float, float, float]
    r: float
    k: float

    def __post_init__(self):
        self.rho = tuple(float(c) for c in self.rho)
        if len(self.rho) != 3 or not all(0.0 <= c <= 1.0 for c in self.rho):
            raise ValueError("albedo must be three values in [0, 1]")
        if not 0.04 <= self.r <= 1.0:
            raise ValueError("roughness must lie in [0.04, 1]")
        if self.k < 0:
            raise ValueError("specular intensity must be >= 0")


@dataclass
class SceneConfig:
    shape: str = "head"                          # "head" or "sphere"
    gt_subdivisions: int = 5
    template_subdivisions: int = 3
    radii: tuple[float, float, float] = (0.75, 1.0, 0.85)
    bump_amplitude: float = 0.03
    bump_count: int = 24
    bump_width: float = 0.22
    n_e: int = 10
    rig_seed: int = 0
    jaw_reference_deg: float = 10.0
    skin: RegionMaterial = field(default_factory=lambda: RegionMaterial((0.78, 0.55, 0.45), 0.5, 0.3753))
    hair: RegionMaterial = field(default_factory=lambda: RegionMaterial((0.25, 0.16, 0.10), 0.7, 0.2))
    texture_amplitude: float = 0.12
    texture_frequency: float = 3.0
    env_kind: str = "studio"
    env_path: str = ""
    env_shape: tuple[int, int] = (64, 128)
    resolution: int = 128
    camera_distance: float = 4.8
    fov_deg: float = 30.0
    frames: int = 75
    test_fraction: float = 0.2
    trajectory_seed: int = 1
    yaw_deg: float = 20.0
    pitch_deg: float = 10.0
    jaw_deg: float = 12.0
    expr_scale: float = 1.0
    render_samples: int = 512
    seed: int = 0

    def __post_init__(self):
        if self.shape not in ("head", "sphere"):
            raise ValueError(f"unknown scene shape {self.shape!r}")
        if self.frames < 2:
            raise ValueError("need at least two frames for a train/test split")
        if not 0 < self.test_fraction < 1:
            raise ValueError("test_fraction must be in (0, 1)")


@dataclass
class HashConfig:
    levels: int = 8
    features: int = 2
    table_size: int = 2 ** 14
    base_resolution: int = 8
    max_resolution: int = 256


@dataclass
class TrainConfig:
    stage1_iterations: int = 1000
    stage2_iterations: int = 1000
    batch_size: int = 4
    lr_deform: float = 1e-3
    lr_material: float = 1e-3
    lr_light: float = 1e-3
    lr_vertex: float = 1e-3
    lr_vertex_stage2: float = 1e-5
    lr_final_factor: float = 1.0         # exponential decay to lr * factor over a stage (1 = constant)
    geometry_delay: float = 0.5          # fraction of stage 1 with vertex offsets frozen
    upsample: bool = True                # single midpoint subdivision during stage 1
    upsample_fraction: float = 0.75
    upsample_lr_factor: float = 0.75
    upsample_reg_factor: float = 4.0
    stage1_encoding: str = "frequency"
    stage2_encoding: str = "hashgrid"
    n_octaves: int = 6
    hash: HashConfig = field(default_factory=HashConfig)
    material_hidden: tuple[int, ...] = (64, 64)
    deform_hidden: tuple[int, ...] = (128, 128)
    deform_octaves: int = 2
    deform_warmup_iterations: int = 1000
    light_hidden: int = 64
    light: str = "neural"                        # "neural" or "lut"
    train_geometry: bool = True
    train_deform: bool = True
    train_light: bool = True
    jaw_open_canonical: bool = True
    smooth_sigma: float = 0.01
    smooth_batch: int = 512
    checkpoint_every: int = 0
    log_every: int = 50
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.stage1_iterations < 0 or self.stage2_iterations < 0:
            raise ValueError("iteration counts must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        for name in ("lr_deform", "lr_material", "lr_light", "lr_vertex", "lr_vertex_stage2"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.lr_final_factor <= 1:
            raise ValueError("lr_final_factor must be in (0, 1]")
        if not 0 <= self.geometry_delay < 1:
            raise ValueError("geometry_delay must be in [0, 1)")
        if not 0 <= self.upsample_fraction <= 1:
            raise ValueError("upsample_fraction must be in [0, 1]")
        if self.light not in ("neural", "lut"):
            raise ValueError("light must be 'neural' or 'lut'")


@dataclass
class LutConfig:
    rows: int = 64
    cols: int = 64
    samples: int = 4096


@dataclass
class PrefilterConfig:
    levels: tuple[float, ...] = (0.04, 0.2, 0.4, 0.6, 0.8, 1.0)
    height: int = 32
    width: int = 64
    samples: int = 2048


@dataclass
class LightFitConfig:
    pairs: int = 10_000
    iterations: int = 2000
    lr: float = 5e-3
    heldout: int = 10_000


@dataclass
class Config:
    scene: SceneConfig = field(default_factory=SceneConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    lut: LutConfig = field(default_factory=LutConfig)
    prefilter: PrefilterConfig = field(default_factory=PrefilterConfig)
    light_fit: LightFitConfig = field(default_factory=LightFitConfig)


def _coerce(tp, value):
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp) and isinstance(value, dict):
        return from_dict(tp, value)
    if origin is tuple:
        return tuple(value)
    if tp is float and isinstance(value, int):
        return float(value)
    return value


def from_dict(cls, data: dict):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise KeyError(f"{cls.__name__}: unknown keys {sorted(unknown)}")
    return cls(**{k: _coerce(hints[k], v) for k, v in data.items()})


def to_dict(obj) -> dict:
    out = {}
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if dataclasses.is_dataclass(v):
            out[f.name] = to_dict(v)
        elif isinstance(v, tuple):
            out[f.name] = list(v)
        else:
            out[f.name] = v
    return out


def load_config(path=None, cls=Config):
    if path is None:
        return cls()
    with open(path, "rb") as fh:
        return from_dict(cls, tomllib.load(fh))


def dump_toml(d: dict) -> str:
    return tomli_w.dumps(d)


def save_config(path, obj) -> None:
    Path(path).write_text(dump_toml(to_dict(obj)))
