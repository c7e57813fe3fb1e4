"""Pinhole camera and a vectorised software rasterizer producing a deferred-shading
G-buffer. Gradients flow through barycentric interpolation only: the
pixel-to-triangle assignment is frozen (no visibility or silhouette terms)."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .envmap import write_pfm
from .nnkit import Tensor, ad


class StaleGBufferError(RuntimeError):
    pass


@dataclass(frozen=True)
class PinholeCamera:
    """Computer-vision convention: camera looks along +z, pixel x right, pixel y down."""
    fx: float
    fy: float
    cx: float
    cy: float
    R: np.ndarray           # world -> camera rotation
    t: np.ndarray           # world -> camera translation
    width: int
    height: int
    near: float = 0.05
    far: float = 100.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not 0 < self.near < self.far:
            raise ValueError("need 0 < near < far")
        object.__setattr__(self, "R", np.asarray(self.R, dtype=np.float64))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64))

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 1.0, 0.0), fov_deg: float = 30.0, width: int = 128,
                height: int = 128, **kw) -> "PinholeCamera":
        eye, target, up = (np.asarray(a, dtype=np.float64) for a in (eye, target, up))
        z = target - eye
        z /= np.linalg.norm(z)
        y = -(up - np.dot(up, z) * z)
        y /= np.linalg.norm(y)
        x = np.cross(y, z)
        R = np.stack([x, y, z])
        f = 0.5 * height / np.tan(np.deg2rad(fov_deg) / 2)
        return cls(f, f, width / 2, height / 2, R, -R @ eye, width, height, **kw)

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.t

    def to_camera(self, p: np.ndarray) -> np.ndarray:
        return p @ self.R.T + self.t

    def project(self, p_world: np.ndarray):
        """Returns (pixel xy (..., 2), depth (...), clipped mask)."""
        pc = self.to_camera(np.asarray(p_world, dtype=np.float64))
        z = pc[..., 2]
        clipped = (z <= self.near) | (z >= self.far)
        zs = np.where(clipped, 1.0, z)
        xy = np.stack([self.fx * pc[..., 0] / zs + self.cx, self.fy * pc[..., 1] / zs + self.cy], axis=-1)
        return xy, z, clipped

    def pixel_rays(self) -> np.ndarray:
        """Unit world-space directions through every pixel centre, (H, W, 3)."""
        j, i = np.meshgrid(np.arange(self.width) + 0.5, np.arange(self.height) + 0.5)
        d = np.stack([(j - self.cx) / self.fx, (i - self.cy) / self.fy, np.ones_like(i)], axis=-1)
        d = d @ self.R
        return d / np.linalg.norm(d, axis=-1, keepdims=True)


def topology_key(faces: np.ndarray, n_vertices: int) -> str:
    h = hashlib.blake2b(np.ascontiguousarray(faces, dtype=np.int64).tobytes(), digest_size=16)
    return f"{n_vertices}:{h.hexdigest()}"


@dataclass
class GBuffer:
    face: np.ndarray        # (H, W) int, -1 where empty
    bary: np.ndarray        # (H, W, 3) perspective-correct barycentrics
    x_c: np.ndarray         # (H, W, 3) canonical position
    x_d: np.ndarray         # (H, W, 3) deformed position
    n_d: np.ndarray         # (H, W, 3) deformed unit normal
    mask: np.ndarray        # (H, W) bool
    faces: np.ndarray       # the (F, 3) index array used for rasterization
    key: str                # topology fingerprint

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape

    def covered(self) -> tuple[np.ndarray, np.ndarray]:
        """(flat pixel indices, face ids) of covered pixels, in raster order."""
        flat = np.flatnonzero(self.mask.ravel())
        return flat, self.face.ravel()[flat]

    def check(self, faces: np.ndarray, n_vertices: int) -> None:
        if topology_key(faces, n_vertices) != self.key:
            raise StaleGBufferError("G-buffer was rasterized with a different mesh topology")


def rasterize(cam: PinholeCamera, v_deformed: np.ndarray, v_canonical: np.ndarray, normals: np.ndarray,
              faces: np.ndarray, cull_backfaces: bool = True) -> GBuffer:
    """Nearest front-facing triangle per pixel centre (ties go to the lower face index)."""
    v_deformed = np.asarray(v_deformed, dtype=np.float64)
    if not (len(v_deformed) == len(v_canonical) == len(normals)):
        raise ValueError("vertex arrays must be aligned")
    faces = np.asarray(faces, dtype=np.int64)
    H, W = cam.height, cam.width
    xy, z, clipped = cam.project(v_deformed)
    pc = cam.to_camera(v_deformed)
    keep = ~clipped[faces].any(axis=1)
    p0, p1, p2 = (xy[faces[:, k]] for k in range(3))
    area = (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1]) - (p1[:, 1] - p0[:, 1]) * (p2[:, 0] - p0[:, 0])
    keep &= np.abs(area) > 1e-12
    if cull_backfaces:
        c0, c1, c2 = (pc[faces[:, k]] for k in range(3))
        keep &= np.einsum("fc,fc->f", np.cross(c1 - c0, c2 - c0), c0) < 0
    fids = np.flatnonzero(keep)
    tri = np.stack([p0[fids], p1[fids], p2[fids]], axis=1)
    x_lo = np.clip(np.ceil(tri[..., 0].min(1) - 0.5), 0, W).astype(np.int64)
    x_hi = np.clip(np.floor(tri[..., 0].max(1) - 0.5), -1, W - 1).astype(np.int64)
    y_lo = np.clip(np.ceil(tri[..., 1].min(1) - 0.5), 0, H).astype(np.int64)
    y_hi = np.clip(np.floor(tri[..., 1].max(1) - 0.5), -1, H - 1).astype(np.int64)
    nx = np.maximum(x_hi - x_lo + 1, 0)
    ny = np.maximum(y_hi - y_lo + 1, 0)
    counts = nx * ny
    face_ids = np.full((H, W), -1, dtype=np.int64)
    bary = np.zeros((H, W, 3))
    if counts.sum() > 0:
        owner = np.repeat(np.arange(len(fids)), counts)
        local = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        px = x_lo[owner] + local % nx[owner]
        py = y_lo[owner] + local // nx[owner]
        cx, cy = px + 0.5, py + 0.5
        t = tri[owner]
        a = area[fids][owner]

        def edge(pa, pb):
            return (pb[:, 0] - pa[:, 0]) * (cy - pa[:, 1]) - (pb[:, 1] - pa[:, 1]) * (cx - pa[:, 0])
        b0 = edge(t[:, 1], t[:, 2]) / a
        b1 = edge(t[:, 2], t[:, 0]) / a
        b2 = edge(t[:, 0], t[:, 1]) / a
        inside = (b0 >= 0) & (b1 >= 0) & (b2 >= 0)
        f_glob = fids[owner]
        zf = z[faces[f_glob]]
        w = np.stack([b0, b1, b2], axis=1) / zf
        wsum = w.sum(axis=1)
        depth = 1.0 / np.where(inside, wsum, 1.0)
        inside &= (depth > cam.near) & (depth < cam.far)
        sel = np.flatnonzero(inside)
        pix = py[sel] * W + px[sel]
        order = np.lexsort((f_glob[sel], depth[sel], pix))
        first = np.ones(len(order), dtype=bool)
        first[1:] = pix[order][1:] != pix[order][:-1]
        win = sel[order[first]]
        wpix = pix[order[first]]
        face_ids.ravel()[wpix] = f_glob[win]
        bary.reshape(-1, 3)[wpix] = w[win] / wsum[win, None]
    mask = face_ids >= 0
    gb = GBuffer(face_ids, bary, np.zeros((H, W, 3)), np.zeros((H, W, 3)), np.zeros((H, W, 3)), mask, faces,
                 topology_key(faces, len(v_deformed)))
    flat, fc = gb.covered()
    if len(flat):
        lam = bary.reshape(-1, 3)[flat]
        idx = faces[fc]
        gb.x_c.reshape(-1, 3)[flat] = np.einsum("pk,pkc->pc", lam, np.asarray(v_canonical)[idx])
        gb.x_d.reshape(-1, 3)[flat] = np.einsum("pk,pkc->pc", lam, v_deformed[idx])
        n = np.einsum("pk,pkc->pc", lam, np.asarray(normals)[idx])
        gb.n_d.reshape(-1, 3)[flat] = n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-12)
    return gb


def interpolate(gbuf: GBuffer, attr, faces: np.ndarray | None = None) -> Tensor:
    """Differentiable barycentric interpolation of per-vertex attributes at covered
    pixels (raster order); returns (P, C)."""
    attr = ad.as_tensor(attr)
    faces = gbuf.faces if faces is None else faces
    gbuf.check(faces, attr.shape[0])
    flat, fc = gbuf.covered()
    lam = gbuf.bary.reshape(-1, 3)[flat]
    idx = faces[fc]
    out = None
    for k in range(3):
        term = ad.take_rows(attr, idx[:, k]) * Tensor(lam[:, k:k + 1])
        out = term if out is None else out + term
    return out


def gbuffer_grads(gbuf: GBuffer, upstream: np.ndarray, n_vertices: int, faces: np.ndarray | None = None) -> np.ndarray:
    """Vertex gradients of sum(upstream * interpolated attribute) under frozen coverage.

    ``upstream`` is a per-pixel (H, W, C) gradient image; returns (n_vertices, C).
    """
    faces = gbuf.faces if faces is None else faces
    gbuf.check(faces, n_vertices)
    up = np.asarray(upstream, dtype=np.float64)
    C = up.shape[-1]
    flat, fc = gbuf.covered()
    g = up.reshape(-1, C)[flat]
    lam = gbuf.bary.reshape(-1, 3)[flat]
    idx = faces[fc]
    out = np.zeros((n_vertices, C))
    for k in range(3):
        for c in range(C):
            out[:, c] += np.bincount(idx[:, k], weights=lam[:, k] * g[:, c], minlength=n_vertices)
    return out


def scatter_image(gbuf: GBuffer, values: np.ndarray, background: float = 0.0) -> np.ndarray:
    """Place per-covered-pixel values (P, C) back into an (H, W, C) image."""
    H, W = gbuf.shape
    values = np.asarray(values)
    img = np.full((H * W,) + values.shape[1:], background, dtype=np.float64)
    flat, _ = gbuf.covered()
    img[flat] = values
    return img.reshape((H, W) + values.shape[1:])


def dump_gbuffer(gbuf: GBuffer, directory) -> None:
    """One PFM per attribute, for golden-image comparisons."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_pfm(d / "x_c.pfm", gbuf.x_c)
    write_pfm(d / "x_d.pfm", gbuf.x_d)
    write_pfm(d / "n_d.pfm", gbuf.n_d)
    write_pfm(d / "bary.pfm", gbuf.bary)
    write_pfm(d / "mask.pfm", gbuf.mask.astype(np.float64))
    write_pfm(d / "face.pfm", gbuf.face.astype(np.float64))
