"""Trainable avatar: canonical mesh offsets, deformation field net, material net
and lighting net, with FLRW checkpointing."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .deform import DeformationRig, PoseExpr, jaw_remap_tensor, lbs_tensor, pseudo_gt_fields, split_field_outputs
from .lightnn import NeuralLight, make_light_net
from .mesh import MeshAdjacency, TriMesh, build_adjacency, upsample_midpoint
from .nnkit import FrequencyEncoding, HashGridEncoding, HashGridSpec, Mlp, RawEncoding, Tensor, ad
from .nnkit import load_checkpoint, save_checkpoint
from .pbr import R_MIN, BrdfConfig

# material inputs are mapped from canonical space into the unit cube
DOMAIN_HALF = 1.3


def normalise_points(x: np.ndarray) -> np.ndarray:
    return np.asarray(x) / (2 * DOMAIN_HALF) + 0.5


def vertex_normals_tensor(v, faces: np.ndarray) -> Tensor:
    """Area-weighted vertex normals, differentiable in the vertex positions."""
    v = ad.as_tensor(v)
    v0, v1, v2 = (ad.take_rows(v, faces[:, k]) for k in range(3))
    fn = ad.cross(v1 - v0, v2 - v0)
    acc = None
    for k in range(3):
        s = ad.segment_sum(fn, faces[:, k], v.shape[0])
        acc = s if acc is None else acc + s
    return ad.normalize(acc)


def make_material_net(encoding: str, cfg: TrainConfig, rng: np.random.Generator) -> Mlp:
    if encoding == "frequency":
        enc = FrequencyEncoding(3, cfg.n_octaves)
    elif encoding == "hashgrid":
        h = cfg.hash
        enc = HashGridEncoding(HashGridSpec(h.levels, h.features, h.table_size, h.base_resolution, h.max_resolution),
                               rng)
    elif encoding == "raw":
        enc = RawEncoding(3)
    else:
        raise ValueError(f"unknown material encoding {encoding!r}")
    return Mlp(enc, list(cfg.material_hidden) + [5], rng=rng, name="material")


def make_deform_net(rig: DeformationRig, cfg: TrainConfig, rng: np.random.Generator) -> Mlp:
    enc = FrequencyEncoding(3, cfg.deform_octaves) if cfg.deform_octaves > 0 else RawEncoding(3)
    net = Mlp(enc, list(cfg.deform_hidden) + [rig.field_width], rng=rng, name="deform")
    net.weights[-1].data[...] = 0.0          # start from zero blendshapes and uniform weights
    return net


def material_from_raw(h: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Albedo in [0, 1]^3, roughness in [r_min, 1], specular intensity in [0, 1]."""
    rho = ad.sigmoid(h[:, 0:3])
    r = ad.sigmoid(h[:, 3]) * (1.0 - R_MIN) + R_MIN
    k = ad.sigmoid(h[:, 4])
    return rho, r, k


@dataclass
class AvatarModel:
    base: TriMesh                      # canonical base mesh; trainable offsets live separately
    offsets: Tensor
    deform_net: Mlp
    material_net: Mlp
    light_net: Mlp
    rig: DeformationRig
    jaw_open: bool = True
    brdf: BrdfConfig = field(default_factory=BrdfConfig)
    material_encoding: str = "frequency"
    _adj: MeshAdjacency | None = field(default=None, repr=False)

    @classmethod
    def create(cls, rig: DeformationRig, cfg: TrainConfig, encoding: str | None = None) -> "AvatarModel":
        rng = np.random.default_rng(cfg.seed)
        jaw = cfg.jaw_open_canonical and rig.jaw_index is not None
        verts = rig.open_template_vertices() if jaw else rig.template.vertices
        base = TriMesh(verts.copy(), rig.template.faces, region_labels=rig.template.region_labels)
        enc = encoding or cfg.stage1_encoding
        return cls(base, Tensor(np.zeros_like(verts), requires_grad=True, name="offsets"),
                   make_deform_net(rig, cfg, rng), make_material_net(enc, cfg, rng),
                   make_light_net(rng, cfg.light_hidden), rig, jaw, material_encoding=enc)

    # -- geometry --------------------------------------------------------------------
    @property
    def faces(self) -> np.ndarray:
        return self.base.faces

    @property
    def adjacency(self) -> MeshAdjacency:
        if self._adj is None:
            self._adj = build_adjacency(self.base)
        return self._adj

    def canonical(self) -> Tensor:
        return Tensor(self.base.vertices) + self.offsets

    def canonical_mesh(self) -> TriMesh:
        return TriMesh(self.base.vertices + self.offsets.data, self.faces, region_labels=self.base.region_labels)

    def fields(self, v_c: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """Blend fields at the canonical vertices (positions enter as data)."""
        return split_field_outputs(self.deform_net(v_c.data), self.rig.n_e, self.rig.n_j)

    def pseudo_fields(self, v_c: np.ndarray):
        return pseudo_gt_fields(self.rig, v_c, jaw_open=self.jaw_open)

    def deform(self, v_c: Tensor, E: Tensor, P: Tensor, W: Tensor, pose: PoseExpr) -> Tensor:
        v = jaw_remap_tensor(v_c, W, self.rig) if self.jaw_open else v_c
        return lbs_tensor(v, E, P, W, self.rig, pose)

    def upsample(self) -> None:
        """Midpoint subdivision; current offsets are folded into the new base."""
        mesh = TriMesh(self.base.vertices, self.faces, self.offsets.data.copy(), self.base.region_labels)
        up, _ = upsample_midpoint(mesh)
        self.base = TriMesh(up.effective_vertices(), up.faces, region_labels=up.region_labels)
        self.offsets = Tensor(np.zeros_like(up.vertices), requires_grad=True, name="offsets")
        self._adj = None

    # -- appearance ------------------------------------------------------------------
    def material(self, x_c) -> tuple[Tensor, Tensor, Tensor]:
        x = x_c.data if isinstance(x_c, Tensor) else np.asarray(x_c)
        return material_from_raw(self.material_net(normalise_points(x)))

    def neural_light(self) -> NeuralLight:
        return NeuralLight(self.light_net)

    def vertex_f0(self) -> np.ndarray:
        return self.brdf.f0_for_labels(self.base.region_labels)

    # -- persistence -----------------------------------------------------------------
    def state(self) -> dict[str, np.ndarray]:
        out = {"mesh/vertices": self.base.vertices, "mesh/faces": self.faces.astype(np.float64),
               "mesh/labels": self.base.region_labels.astype(np.float64), "mesh/offsets": self.offsets.data}
        for tag, net in (("deform", self.deform_net), ("material", self.material_net), ("light", self.light_net)):
            for i, p in enumerate(net.parameters()):
                out[f"{tag}/{i}"] = p.data
        return out

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.state().items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        self.base = TriMesh(snap["mesh/vertices"], snap["mesh/faces"].astype(np.int64),
                            region_labels=snap["mesh/labels"].astype(np.int64))
        if self.offsets.data.shape == snap["mesh/offsets"].shape:
            self.offsets.data = snap["mesh/offsets"].copy()      # keep the optimiser's reference
        else:
            self.offsets = Tensor(snap["mesh/offsets"].copy(), requires_grad=True, name="offsets")
        self._adj = None
        for tag, net in (("deform", self.deform_net), ("material", self.material_net), ("light", self.light_net)):
            for i, p in enumerate(net.parameters()):
                key = f"{tag}/{i}"
                if snap[key].shape != p.data.shape:
                    raise ValueError(f"checkpoint tensor {key} has shape {snap[key].shape}, expected {p.data.shape}")
                p.data = snap[key].copy()

    def save(self, path, cfg: TrainConfig) -> None:
        from .config import to_dict
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(path, self.state())
        meta = {"material_encoding": self.material_encoding, "jaw_open": self.jaw_open, "train": to_dict(cfg)}
        path.with_suffix(".json").write_text(json.dumps(meta, indent=1))

    @classmethod
    def load(cls, path, rig: DeformationRig) -> "AvatarModel":
        from .config import from_dict
        path = Path(path)
        meta_path = path.with_suffix(".json")
        if not path.exists() or not meta_path.exists():
            raise FileNotFoundError(f"missing model asset: {path if not path.exists() else meta_path}")
        meta = json.loads(meta_path.read_text())
        cfg = from_dict(TrainConfig, meta["train"])
        model = cls.create(rig, cfg, meta["material_encoding"])
        model.jaw_open = meta["jaw_open"]
        model.restore(load_checkpoint(path))
        return model

