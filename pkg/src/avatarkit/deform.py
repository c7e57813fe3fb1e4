"""Pose/expression deformation: blendshape offsets, linear blend skinning with
per-vertex learned fields, jaw-open canonical remapping and nearest-vertex
pseudo ground truth."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from .mesh import TriMesh, vertex_normals
from .nnkit import Mlp, Tensor, ad, no_grad

JOINT_NAMES = ("head", "jaw", "neck", "shoulders")


@dataclass
class BlendFields:
    """Per-vertex expression basis E (N, n_e, 3), pose correctives P (N, n_j, 9, 3)
    and skinning weights W (N, n_j)."""
    E: np.ndarray
    P: np.ndarray
    W: np.ndarray

    def __len__(self):
        return len(self.W)

    @property
    def n_e(self) -> int:
        return self.E.shape[1]

    @property
    def n_j(self) -> int:
        return self.W.shape[1]

    def take(self, idx) -> "BlendFields":
        return BlendFields(self.E[idx], self.P[idx], self.W[idx])

    def midpoints(self, a: np.ndarray, b: np.ndarray) -> "BlendFields":
        """Append the mean of rows a and b (used by midpoint subdivision)."""
        return BlendFields(np.concatenate([self.E, 0.5 * (self.E[a] + self.E[b])]),
                           np.concatenate([self.P, 0.5 * (self.P[a] + self.P[b])]),
                           np.concatenate([self.W, 0.5 * (self.W[a] + self.W[b])]))

    def check(self, tol: float = 1e-9) -> None:
        for name in ("E", "P", "W"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite values in blend field {name}")
        if (self.W < -tol).any() or np.abs(self.W.sum(axis=1) - 1.0).max(initial=0.0) > tol:
            raise ValueError("skinning weights must be non-negative and sum to one")


@dataclass
class PoseExpr:
    rotations: np.ndarray       # (n_j, 3, 3) absolute per-joint rotations
    translations: np.ndarray    # (n_j, 3)
    psi: np.ndarray             # (n_e,)

    def __post_init__(self):
        self.rotations = np.asarray(self.rotations, dtype=np.float64)
        self.translations = np.asarray(self.translations, dtype=np.float64)
        self.psi = np.asarray(self.psi, dtype=np.float64)
        R = self.rotations
        if np.abs(R @ np.swapaxes(R, 1, 2) - np.eye(3)).max(initial=0.0) > 1e-8 \
                or np.abs(np.linalg.det(R) - 1.0).max(initial=0.0) > 1e-8:
            raise ValueError("joint rotations must be orthonormal with det +1")

    @classmethod
    def identity(cls, n_j: int, n_e: int) -> "PoseExpr":
        return cls(np.tile(np.eye(3), (n_j, 1, 1)), np.zeros((n_j, 3)), np.zeros(n_e))


@dataclass
class DeformationRig:
    rest_joints: np.ndarray
    n_e: int
    template: TriMesh
    analytic: Callable[[np.ndarray], BlendFields]
    jaw_index: int | None = 1
    jaw_reference_deg: float = 10.0
    joint_names: tuple = JOINT_NAMES
    _fields: BlendFields | None = field(default=None, repr=False)
    _open_vertices: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.rest_joints = np.asarray(self.rest_joints, dtype=np.float64)
        if self.n_j < 1 or self.n_e < 1:
            raise ValueError("rig needs at least one joint and one expression")
        if not np.all(np.isfinite(self.rest_joints)):
            raise ValueError("rest joints must be finite")

    @property
    def n_j(self) -> int:
        return len(self.rest_joints)

    @property
    def field_width(self) -> int:
        return self.n_e * 3 + self.n_j * 27 + self.n_j

    @property
    def analytic_fields(self) -> BlendFields:
        """Ground-truth fields at the template vertices."""
        if self._fields is None:
            self._fields = self.analytic(self.template.vertices)
        return self._fields

    def reference_transforms(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-joint (R, t) of the jaw-open reference pose (identity except the jaw)."""
        R = np.tile(np.eye(3), (self.n_j, 1, 1))
        t = np.zeros((self.n_j, 3))
        if self.jaw_index is not None:
            Rj = rot_x(np.deg2rad(self.jaw_reference_deg))
            c = self.rest_joints[self.jaw_index]
            R[self.jaw_index] = Rj
            t[self.jaw_index] = c - Rj @ c
        return R, t

    def open_template_vertices(self) -> np.ndarray:
        """Template vertices in the jaw-open canonical configuration."""
        if self._open_vertices is None:
            self._open_vertices = jaw_open_remap(self.template, self, weights=self.analytic_fields.W,
                                                 inverse=True).vertices
        return self._open_vertices


def rot_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


# -- field queries -----------------------------------------------------------

def split_field_outputs(raw: Tensor, n_e: int, n_j: int) -> tuple[Tensor, Tensor, Tensor]:
    """Split raw network outputs into (E, P, W); W goes through a softmax."""
    n = raw.shape[0]
    E = ad.reshape(raw[:, :n_e * 3], (n, n_e, 3))
    P = ad.reshape(raw[:, n_e * 3:n_e * 3 + n_j * 27], (n, n_j, 9, 3))
    logits = raw[:, n_e * 3 + n_j * 27:]
    shifted = logits - logits.data.max(axis=1, keepdims=True)
    ex = ad.exp(shifted)
    W = ex / ex.sum(axis=1, keepdims=True)
    return E, P, W


def query_fields(net: Mlp, x: np.ndarray, n_e: int, n_j: int) -> BlendFields:
    expected = n_e * 3 + n_j * 27 + n_j
    if net.out_dim != expected:
        raise ValueError(f"deformation net outputs {net.out_dim} values, rig needs {expected}")
    with no_grad():
        E, P, W = split_field_outputs(net(np.atleast_2d(x)), n_e, n_j)
    return BlendFields(E.data, P.data, W.data)


# -- blendshapes and skinning --------------------------------------------------

def pose_features(rotations: np.ndarray) -> np.ndarray:
    return (rotations - np.eye(3)).reshape(len(rotations), 9)


def pose_offset(P, rotations: np.ndarray):
    """sum_j vec(R_j - I) . P_j ; P is (N, n_j, 9, 3) or (n_j, 9, 3)."""
    feats = pose_features(rotations)
    if isinstance(P, Tensor):
        return ad.einsum("njkc,jk->nc", P, Tensor(feats))
    P = np.asarray(P)
    return np.einsum("...jkc,jk->...c", P, feats)


def expr_offset(E, psi: np.ndarray):
    """sum_e psi_e E_e ; E is (N, n_e, 3) or (n_e, 3)."""
    if isinstance(E, Tensor):
        return ad.einsum("nec,e->nc", E, Tensor(np.asarray(psi, dtype=float)))
    return np.einsum("...ec,e->...c", np.asarray(E), np.asarray(psi, dtype=float))


def blend_rigid(W: Tensor, R: np.ndarray, t: np.ndarray, v: Tensor) -> Tensor:
    """sum_j W_j (R_j v + t_j) for per-vertex weights W (N, n_j)."""
    Rb = ad.einsum("nj,jab->nab", W, Tensor(R))
    tb = ad.einsum("nj,ja->na", W, Tensor(t))
    return ad.einsum("nab,nb->na", Rb, v) + tb


def skinning_transforms(rig: DeformationRig, pose: PoseExpr) -> tuple[np.ndarray, np.ndarray]:
    """Joint-centred rigid maps v -> R (v - c) + c + t as (R, R-free translation)."""
    R = pose.rotations
    c = rig.rest_joints
    return R, c + pose.translations - np.einsum("jab,jb->ja", R, c)


def lbs_tensor(v: Tensor, E: Tensor, P: Tensor, W: Tensor, rig: DeformationRig, pose: PoseExpr) -> Tensor:
    shaped = v + pose_offset(P, pose.rotations) + expr_offset(E, pose.psi)
    R, t = skinning_transforms(rig, pose)
    return blend_rigid(W, R, t, shaped)


def lbs_deform(mesh: TriMesh, fields: BlendFields, rig: DeformationRig, pose: PoseExpr):
    """Deformed vertices and their recomputed vertex normals."""
    if len(fields) != mesh.n_vertices:
        raise ValueError(f"{len(fields)} field rows for {mesh.n_vertices} vertices")
    fields.check()
    with no_grad():
        v = lbs_tensor(Tensor(mesh.effective_vertices()), Tensor(fields.E), Tensor(fields.P),
                       Tensor(fields.W), rig, pose).data
    return v, vertex_normals(mesh, v)


# -- jaw-open canonical remap --------------------------------------------------

def jaw_remap_tensor(v: Tensor, W: Tensor, rig: DeformationRig) -> Tensor:
    """Map jaw-open canonical points back to the zero pose (blend of inverse references)."""
    R, t = rig.reference_transforms()
    Rinv = np.swapaxes(R, 1, 2)
    return blend_rigid(W, Rinv, -np.einsum("jab,jb->ja", Rinv, t), v)


def jaw_open_remap(mesh: TriMesh, rig: DeformationRig, weights: np.ndarray | None = None,
                   inverse: bool = False) -> TriMesh:
    """Re-express canonical vertices relative to the jaw-open reference pose.

    The forward map blends the inverse reference transforms with skinning
    weights; ``inverse=True`` applies the exact per-vertex inverse of that blend.
    """
    if rig.jaw_index is None:
        warnings.warn("rig has no jaw joint; jaw-open remap is a no-op")
        return mesh
    verts = mesh.effective_vertices()
    if weights is None:
        weights = pseudo_gt_fields(rig, verts).W
    R, t = rig.reference_transforms()
    Rinv = np.swapaxes(R, 1, 2)
    tinv = -np.einsum("jab,jb->ja", Rinv, t)
    A = np.einsum("nj,jab->nab", weights, Rinv)
    b = weights @ tinv
    if inverse:
        out = np.linalg.solve(A, (verts - b)[..., None])[..., 0]
    else:
        out = np.einsum("nab,nb->na", A, verts) + b
    return mesh.with_vertices(out)


# -- pseudo ground truth -------------------------------------------------------

def nearest_vertex(points: np.ndarray, x: np.ndarray, tree: cKDTree | None = None) -> np.ndarray:
    """Index of the nearest point for each query; ties go to the lowest index."""
    x = np.atleast_2d(x)
    tree = tree or cKDTree(points)
    k = min(4, len(points))
    d, idx = tree.query(x, k=k)
    d, idx = d.reshape(len(x), k), idx.reshape(len(x), k)
    tie = d <= d[:, :1]
    return np.where(tie, idx, np.iinfo(np.int64).max).min(axis=1)


def pseudo_gt_fields(rig: DeformationRig, x: np.ndarray, jaw_open: bool = False) -> BlendFields:
    """Analytic fields of the template vertex nearest to each query point.

    With ``jaw_open=True`` the lookup uses the jaw-open template configuration
    (the space the trained canonical mesh lives in).
    """
    verts = rig.open_template_vertices() if jaw_open else rig.template.vertices
    return rig.analytic_fields.take(nearest_vertex(verts, x))


# -- synthetic rig -------------------------------------------------------------

def _sig(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def make_rig_lite(template: TriMesh, n_e: int = 10, seed: int = 0, jaw_reference_deg: float = 10.0,
                  expr_amplitude: float = 0.04, pose_amplitude: float = 0.02) -> DeformationRig:
    """Four-joint rig (head, jaw, neck, static shoulders) with smooth analytic fields."""
    rng = np.random.default_rng(seed)
    joints = np.array([[0.0, -0.55, -0.1], [0.0, -0.25, -0.05], [0.0, -0.95, -0.1], [0.0, -1.4, 0.0]])
    n_j = len(joints)
    centers = np.stack([rng.uniform(-0.5, 0.5, n_e), rng.uniform(-0.7, 0.4, n_e), np.full(n_e, 0.8)], 1)
    dirs = rng.normal(size=(n_e, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    freq = rng.normal(scale=1.5, size=(n_j, 9, 3))
    phase = rng.uniform(0, 2 * np.pi, (n_j, 9))
    pdir = rng.normal(size=(n_j, 9, 3))
    pdir /= np.linalg.norm(pdir, axis=-1, keepdims=True)

    def analytic(x: np.ndarray) -> BlendFields:
        x = np.atleast_2d(x)
        y, z = x[:, 1], x[:, 2]
        scores = np.stack([
            np.ones(len(x)),
            3.0 * _sig(10 * (-y - 0.35)) * _sig(8 * (z - 0.1)),
            2.0 * _sig(10 * (-y - 0.75)),
            0.2 * _sig(10 * (-y - 0.95)),
        ], axis=1)
        W = scores / scores.sum(axis=1, keepdims=True)
        d2 = ((x[:, None, :] - centers[None]) ** 2).sum(-1)
        E = expr_amplitude * np.exp(-d2 / (2 * 0.35 ** 2))[..., None] * dirs[None]
        arg = np.einsum("nc,jkc->njk", x, freq) + phase[None]
        P = pose_amplitude * np.sin(arg)[..., None] * pdir[None]
        return BlendFields(E, P, W)

    return DeformationRig(joints, n_e, template, analytic, jaw_index=1, jaw_reference_deg=jaw_reference_deg)
