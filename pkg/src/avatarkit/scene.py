"""Synthetic ground-truth scenes: a bumpy head (or sphere) driven by the lite rig,
per-region materials, a fixed camera and Monte-Carlo rendered frames."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import SceneConfig, load_config, save_config
from .deform import BlendFields, DeformationRig, PoseExpr, lbs_deform, make_rig_lite, rot_x, rot_y, rot_z
from .envmap import EnvMap, load_env, procedural_env, read_pfm, write_pfm
from .mesh import HAIR, SKIN, TriMesh, icosphere, save_obj, vertex_normals
from .pbr import BrdfConfig, MaterialSample, reference_shade, srgb_encode, to_uint8
from .raster import GBuffer, PinholeCamera, rasterize

# kinematic chain of the lite rig: head -> neck -> shoulders, jaw -> head
PARENTS = (2, 0, 3, -1)


@dataclass
class FrameRecord:
    image: np.ndarray          # (H, W, 3) linear RGB
    mask: np.ndarray           # (H, W) bool
    pose: PoseExpr
    camera: PinholeCamera

    def __post_init__(self):
        if self.image.shape[:2] != self.mask.shape:
            raise ValueError("image and mask resolution differ")


@dataclass
class SyntheticScene:
    cfg: SceneConfig
    rig: DeformationRig
    gt_mesh: TriMesh
    gt_fields: BlendFields
    env: EnvMap
    camera: PinholeCamera
    frames: list[FrameRecord]
    train_idx: np.ndarray
    test_idx: np.ndarray

    def train_frames(self) -> list[FrameRecord]:
        return [self.frames[i] for i in self.train_idx]

    def test_frames(self) -> list[FrameRecord]:
        return [self.frames[i] for i in self.test_idx]


# -- geometry and materials -----------------------------------------------------------

def _radii(cfg: SceneConfig) -> np.ndarray:
    return np.ones(3) if cfg.shape == "sphere" else np.asarray(cfg.radii, dtype=np.float64)


def region_of(cfg: SceneConfig, x: np.ndarray) -> np.ndarray:
    """Hair on the crown and back of the head, skin elsewhere (canonical positions)."""
    x = np.atleast_2d(x)
    if cfg.shape == "sphere":
        return np.full(len(x), SKIN, dtype=np.int64)
    u = x / _radii(cfg)
    hair = (u[:, 1] > 0.45) | ((u[:, 2] < -0.3) & (u[:, 1] > -0.1))
    return np.where(hair, HAIR, SKIN).astype(np.int64)


def template_mesh(cfg: SceneConfig) -> TriMesh:
    m = icosphere(cfg.template_subdivisions)
    v = m.vertices * _radii(cfg)
    return TriMesh(v, m.faces, region_labels=region_of(cfg, v))


def gt_surface(cfg: SceneConfig) -> TriMesh:
    """Ellipsoid with random Gaussian bumps along the radial direction."""
    m = icosphere(cfg.gt_subdivisions)
    u = m.vertices
    rng = np.random.default_rng(cfg.seed)
    centers = rng.normal(size=(cfg.bump_count, 3))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    signs = rng.choice([-1.0, 1.0], cfg.bump_count)
    ang = np.arccos(np.clip(u @ centers.T, -1, 1))
    h = cfg.bump_amplitude * (np.exp(-0.5 * (ang / cfg.bump_width) ** 2) @ signs)
    v = (u * (1.0 + h)[:, None]) * _radii(cfg)
    return TriMesh(v, m.faces, region_labels=region_of(cfg, v))


def gt_material(cfg: SceneConfig, x: np.ndarray) -> tuple[MaterialSample, np.ndarray]:
    """Ground-truth material and region label at canonical positions."""
    x = np.atleast_2d(x)
    labels = region_of(cfg, x)
    rho = np.empty((len(x), 3))
    r = np.empty(len(x))
    k = np.empty(len(x))
    for lab, m in ((SKIN, cfg.skin), (HAIR, cfg.hair)):
        sel = labels == lab
        rho[sel], r[sel], k[sel] = m.rho, m.r, m.k
    if cfg.texture_amplitude > 0:
        f = cfg.texture_frequency
        tex = np.sin(f * x[:, 0]) * np.sin(f * x[:, 1] + 1.0) * np.sin(f * x[:, 2] + 2.0)
        rho = rho * (1.0 + cfg.texture_amplitude * tex)[:, None]
    return MaterialSample(np.clip(rho, 0, 1), r, k), labels


def scene_env(cfg: SceneConfig) -> EnvMap:
    env = load_env(cfg.env_path) if cfg.env_path else procedural_env(cfg.env_kind, *cfg.env_shape)
    # quantise to the float32 precision of the PFM copy so reloaded scenes match exactly
    return EnvMap(env.data.astype(np.float32).astype(np.float64))


def scene_camera(cfg: SceneConfig) -> PinholeCamera:
    target = (0.0, 0.0, 0.0) if cfg.shape == "sphere" else (0.0, -0.15, 0.0)
    return PinholeCamera.look_at((0.0, target[1], cfg.camera_distance), target, fov_deg=cfg.fov_deg,
                                 width=cfg.resolution, height=cfg.resolution)


def scene_rig(cfg: SceneConfig) -> DeformationRig:
    rig = make_rig_lite(template_mesh(cfg), n_e=cfg.n_e, seed=cfg.rig_seed, jaw_reference_deg=cfg.jaw_reference_deg)
    if cfg.shape == "sphere":
        rig.jaw_index = None
    return rig


# -- trajectory -----------------------------------------------------------------------

def chain_pose(rig: DeformationRig, local: np.ndarray, psi: np.ndarray, parents=PARENTS) -> PoseExpr:
    """World per-joint transforms from local rotations about each joint centre."""
    c = rig.rest_joints
    n = len(c)
    R = np.zeros((n, 3, 3))
    t = np.zeros((n, 3))
    done = np.zeros(n, dtype=bool)

    def solve(j):
        if done[j]:
            return
        p = parents[j]
        if p < 0:
            R[j], t[j] = local[j], 0.0
        else:
            solve(p)
            # world(v) = parent(local(v)); write as R (v - c_j) + c_j + t
            R[j] = R[p] @ local[j]
            t[j] = R[p] @ (c[j] - c[p]) + c[p] + t[p] - c[j]
        done[j] = True
    for j in range(n):
        solve(j)
    return PoseExpr(R, t, psi)


def make_trajectory(cfg: SceneConfig, rig: DeformationRig) -> list[PoseExpr]:
    rng = np.random.default_rng(cfg.trajectory_seed)
    poses = []
    for _ in range(cfg.frames):
        if cfg.shape == "sphere":
            poses.append(PoseExpr.identity(rig.n_j, rig.n_e))
            continue
        yaw, pitch, roll = np.deg2rad(rng.uniform(-1, 1, 3) * [cfg.yaw_deg, cfg.pitch_deg, 0.3 * cfg.pitch_deg])
        jaw = np.deg2rad(rng.uniform(0, cfg.jaw_deg))
        neck = rng.uniform(-1, 1, 2) * 0.3
        local = np.stack([
            rot_y(yaw) @ rot_x(pitch) @ rot_z(roll),
            rot_x(jaw),
            rot_y(neck[0] * yaw) @ rot_x(neck[1] * pitch),
            np.eye(3),
        ])
        psi = cfg.expr_scale * 0.7 * rng.normal(size=rig.n_e)
        poses.append(chain_pose(rig, local, psi))
    return poses


# -- rendering ------------------------------------------------------------------------

def gt_gbuffer(scene_cfg: SceneConfig, rig: DeformationRig, mesh: TriMesh, fields: BlendFields,
               pose: PoseExpr, cam: PinholeCamera) -> GBuffer:
    v_d, n_d = lbs_deform(mesh, fields, rig, pose)
    return rasterize(cam, v_d, mesh.effective_vertices(), n_d, mesh.faces)


def render_gt_frame(cfg: SceneConfig, gb: GBuffer, env: EnvMap, cam: PinholeCamera, seed: int,
                    brdf: BrdfConfig | None = None) -> np.ndarray:
    brdf = brdf or BrdfConfig()
    flat, _ = gb.covered()
    img = np.zeros(gb.shape + (3,))
    if len(flat) == 0:
        return img
    x_c = gb.x_c.reshape(-1, 3)[flat]
    x_d = gb.x_d.reshape(-1, 3)[flat]
    n = gb.n_d.reshape(-1, 3)[flat]
    w_o = cam.center - x_d
    w_o /= np.linalg.norm(w_o, axis=1, keepdims=True)
    mat, labels = gt_material(cfg, x_c)
    rgb = reference_shade(n, w_o, mat, brdf.f0_for_labels(labels), env, cfg.render_samples, seed, flat)
    img.reshape(-1, 3)[flat] = rgb
    return img


def split_indices(n: int, test_fraction: float) -> tuple[np.ndarray, np.ndarray]:
    """Last ``test_fraction`` of the frames (by index) are held out."""
    n_test = max(1, int(round(n * test_fraction)))
    n_test = min(n_test, n - 1)
    return np.arange(n - n_test), np.arange(n - n_test, n)


def generate_scene(cfg: SceneConfig) -> SyntheticScene:
    rig = scene_rig(cfg)
    mesh = gt_surface(cfg)
    fields = rig.analytic(mesh.vertices)
    env = scene_env(cfg)
    cam = scene_camera(cfg)
    frames = []
    for pose in make_trajectory(cfg, rig):
        gb = gt_gbuffer(cfg, rig, mesh, fields, pose, cam)
        # frame-independent seed: identical poses give identical frames
        img = render_gt_frame(cfg, gb, env, cam, seed=cfg.seed)
        frames.append(FrameRecord(img, gb.mask.copy(), pose, cam))
    train, test = split_indices(cfg.frames, cfg.test_fraction)
    return SyntheticScene(cfg, rig, mesh, fields, env, cam, frames, train, test)


# -- persistence ----------------------------------------------------------------------

def camera_to_dict(cam: PinholeCamera) -> dict:
    return {"fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy, "R": cam.R.tolist(), "t": cam.t.tolist(),
            "width": cam.width, "height": cam.height, "near": cam.near, "far": cam.far}


def camera_from_dict(d: dict) -> PinholeCamera:
    return PinholeCamera(d["fx"], d["fy"], d["cx"], d["cy"], np.array(d["R"]), np.array(d["t"]), int(d["width"]),
                         int(d["height"]), d["near"], d["far"])


def save_scene(scene: SyntheticScene, out_dir) -> Path:
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    (out / "gt").mkdir(exist_ok=True)
    (out / "preview").mkdir(exist_ok=True)
    save_config(out / "scene.toml", scene.cfg)
    save_obj(out / "gt" / "mesh.obj", scene.gt_mesh)
    save_obj(out / "gt" / "template.obj", scene.rig.template)
    write_pfm(out / "gt" / "env.pfm", scene.env.data)
    (out / "camera.json").write_text(json.dumps(camera_to_dict(scene.camera), indent=1))
    (out / "split.json").write_text(json.dumps({"train": scene.train_idx.tolist(), "test": scene.test_idx.tolist()}))
    from PIL import Image
    for i, fr in enumerate(scene.frames):
        np.savez(out / "frames" / f"{i:04d}.npz", image=fr.image, mask=fr.mask, rotations=fr.pose.rotations,
                 translations=fr.pose.translations, psi=fr.pose.psi)
        write_pfm(out / "frames" / f"{i:04d}.pfm", fr.image)
        Image.fromarray(to_uint8(srgb_encode(fr.image))).save(out / "preview" / f"{i:04d}.png")
    return out


def load_scene(path) -> SyntheticScene:
    """Reload frames from disk; rig, meshes and materials are rebuilt from scene.toml."""
    d = Path(path)
    if not (d / "scene.toml").exists():
        raise FileNotFoundError(f"{d} is not a dataset directory (missing scene.toml)")
    cfg = load_config(d / "scene.toml", SceneConfig)
    rig = scene_rig(cfg)
    mesh = gt_surface(cfg)
    cam = camera_from_dict(json.loads((d / "camera.json").read_text()))
    env = EnvMap(read_pfm(d / "gt" / "env.pfm"))
    frames = []
    for i in range(cfg.frames):
        z = np.load(d / "frames" / f"{i:04d}.npz")
        frames.append(FrameRecord(z["image"], z["mask"], PoseExpr(z["rotations"], z["translations"], z["psi"]), cam))
    split = json.loads((d / "split.json").read_text())
    return SyntheticScene(cfg, rig, mesh, rig.analytic(mesh.vertices), env, cam, frames,
                          np.array(split["train"], dtype=np.int64), np.array(split["test"], dtype=np.int64))
