"""Equirectangular environment maps and linear image I/O (PFM, Radiance RGBE).

Direction convention (y up): row i covers polar angle theta in [0, pi] from +y,
column j covers azimuth phi in [0, 2 pi) measured from +x towards +z:
    d = (sin t cos p, cos t, sin t sin p).
Texel centres sit at ((i + 0.5) pi / H, (j + 0.5) 2 pi / W).
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class ImageFormatError(ValueError):
    pass


# -- direction mapping ---------------------------------------------------------

def angles_to_dirs(theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    theta, phi = np.broadcast_arrays(theta, phi)
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), np.cos(theta), st * np.sin(phi)], axis=-1)


def dirs_to_angles(d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    theta = np.arccos(np.clip(d[..., 1], -1.0, 1.0))
    phi = np.mod(np.arctan2(d[..., 2], d[..., 0]), 2.0 * np.pi)
    return theta, phi


def texel_directions(H: int, W: int) -> np.ndarray:
    theta = (np.arange(H) + 0.5) * np.pi / H
    phi = (np.arange(W) + 0.5) * 2.0 * np.pi / W
    return angles_to_dirs(theta[:, None], phi[None, :])


def texel_solid_angles(H: int, W: int) -> np.ndarray:
    """(H, 1) exact solid angle of each texel row."""
    edges = np.arange(H + 1) * np.pi / H
    return ((np.cos(edges[:-1]) - np.cos(edges[1:])) * 2.0 * np.pi / W)[:, None]


def bilinear_equirect(img: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Bilinear lookup between texel centres; wraps in azimuth, clamps in polar angle."""
    H, W = img.shape[:2]
    theta, phi = dirs_to_angles(dirs)
    fy = np.clip(theta / np.pi * H - 0.5, 0.0, H - 1.0)
    fx = phi / (2.0 * np.pi) * W - 0.5
    y0 = np.minimum(np.floor(fy).astype(np.int64), max(H - 2, 0))
    y1 = np.minimum(y0 + 1, H - 1)
    x0f = np.floor(fx)
    tx = (fx - x0f)[..., None]
    ty = (fy - y0)[..., None]
    x0 = np.mod(x0f.astype(np.int64), W)
    x1 = np.mod(x0 + 1, W)
    top = img[y0, x0] * (1 - tx) + img[y0, x1] * tx
    bot = img[y1, x0] * (1 - tx) + img[y1, x1] * tx
    return top * (1 - ty) + bot * ty


def bilinear_equirect_grad(img: np.ndarray, dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear lookup and its derivative with respect to the (unnormalised) direction.

    Returns values (..., C) and Jacobian (..., C, 3); zero where the polar clamp is
    active or the direction is within 1e-6 of a pole."""
    H, W = img.shape[:2]
    theta, phi = dirs_to_angles(dirs)
    fy_raw = theta / np.pi * H - 0.5
    fy = np.clip(fy_raw, 0.0, H - 1.0)
    fx = phi / (2.0 * np.pi) * W - 0.5
    y0 = np.minimum(np.floor(fy).astype(np.int64), max(H - 2, 0))
    y1 = np.minimum(y0 + 1, H - 1)
    x0f = np.floor(fx)
    tx = (fx - x0f)[..., None]
    ty = (fy - y0)[..., None]
    x0 = np.mod(x0f.astype(np.int64), W)
    x1 = np.mod(x0 + 1, W)
    a, b, c, d = img[y0, x0], img[y0, x1], img[y1, x0], img[y1, x1]
    top = a * (1 - tx) + b * tx
    bot = c * (1 - tx) + d * tx
    val = top * (1 - ty) + bot * ty
    dv_dfx = (b - a) * (1 - ty) + (d - c) * ty
    dv_dfy = (bot - top) * ((fy_raw > 0) & (fy_raw < H - 1))[..., None]
    dx, dy, dz = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    rho2 = dx * dx + dz * dz
    ok = rho2 > 1e-12
    safe = np.where(ok, rho2, 1.0)
    sin_t = np.sqrt(np.clip(1.0 - dy * dy, 0.0, None))
    dth_dy = np.where(sin_t > 1e-6, -1.0 / np.maximum(sin_t, 1e-6), 0.0)
    dfx = np.stack([-dz / safe, np.zeros_like(dx), dx / safe], -1) * (W / (2.0 * np.pi)) * ok[..., None]
    dfy = np.stack([np.zeros_like(dy), dth_dy, np.zeros_like(dy)], -1) * (H / np.pi)
    jac = dv_dfx[..., :, None] * dfx[..., None, :] + dv_dfy[..., :, None] * dfy[..., None, :]
    return val, jac


@dataclass
class EnvMap:
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise ImageFormatError(f"environment must be (H, W, 3), got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ImageFormatError("environment has non-finite texels")
        if (self.data < 0).any():
            raise ImageFormatError("environment has negative texels")

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[:2]

    def lookup(self, dirs: np.ndarray) -> np.ndarray:
        return bilinear_equirect(self.data, dirs)

    def scaled(self, s: float) -> "EnvMap":
        return EnvMap(self.data * s)

    def roll_azimuth(self, texels: int) -> "EnvMap":
        """Rotate about +y by texels * 2 pi / W (exact resampling)."""
        return EnvMap(np.roll(self.data, texels, axis=1))

    def irradiance_quadrature(self, normals: np.ndarray) -> np.ndarray:
        """E(n) = sum_texels L cos+ dOmega, a direct texel-sum quadrature."""
        H, W = self.shape
        d = texel_directions(H, W).reshape(-1, 3)
        w = np.broadcast_to(texel_solid_angles(H, W), (H, W)).reshape(-1)
        cos = np.maximum(normals.reshape(-1, 3) @ d.T, 0.0)
        out = (cos * w) @ self.data.reshape(-1, 3)
        return out.reshape(normals.shape[:-1] + (3,))

    def mip_chain(self, min_height: int = 2) -> list[np.ndarray]:
        """Solid-angle weighted 2x2 box pyramid, finest first."""
        levels = [self.data]
        img = self.data
        while img.shape[0] % 2 == 0 and img.shape[1] % 2 == 0 and img.shape[0] // 2 >= min_height:
            H, W = img.shape[:2]
            w = texel_solid_angles(H, W)[:, :, None]
            num = (img * w).reshape(H // 2, 2, W // 2, 2, 3).sum(axis=(1, 3))
            den = np.broadcast_to(w, (H, W, 1)).reshape(H // 2, 2, W // 2, 2, 1).sum(axis=(1, 3))
            img = num / den
            levels.append(img)
        return levels


# -- procedural environments ----------------------------------------------------

def _lobe(d: np.ndarray, axis, sharpness: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    return np.exp(sharpness * (d @ axis - 1.0))[..., None]


def procedural_env(kind: str, H: int = 32, W: int = 64) -> EnvMap:
    d = texel_directions(H, W)
    up = np.clip(d[..., 1:2], -1, 1)
    if kind == "constant":
        return EnvMap(np.ones((H, W, 3)))
    if kind == "sky":
        sky = (0.5 + 0.5 * up) * np.array([0.45, 0.6, 0.9]) + (0.5 - 0.5 * up) * np.array([0.25, 0.2, 0.15])
        return EnvMap(sky + 3.0 * _lobe(d, [0.4, 0.6, 0.7], 12.0) * np.array([1.0, 0.9, 0.75]))
    if kind == "studio":
        base = np.full((H, W, 3), 0.15)
        key = 2.5 * _lobe(d, [-0.5, 0.4, 0.8], 8.0) * np.array([1.0, 0.95, 0.9])
        fill = 1.2 * _lobe(d, [0.7, 0.1, 0.6], 5.0) * np.array([0.7, 0.8, 1.0])
        return EnvMap(base + key + fill)
    if kind == "sunset":
        band = np.exp(-8.0 * up ** 2) * np.array([1.2, 0.6, 0.3])
        return EnvMap(0.1 + band + 0.3 * np.clip(up, 0, 1) * np.array([0.3, 0.4, 0.8])
                      + 1.5 * _lobe(d, [0.0, 0.15, -1.0], 20.0) * np.array([1.0, 0.5, 0.2]))
    raise ValueError(f"unknown procedural environment {kind!r}")


# -- PFM -------------------------------------------------------------------------

def write_pfm(path, img: np.ndarray) -> None:
    """Little-endian PFM; rows are stored bottom-to-top as the format requires."""
    img = np.asarray(img)
    if img.ndim == 2 or (img.ndim == 3 and img.shape[2] == 1):
        tag, img = b"Pf", img.reshape(img.shape[0], img.shape[1])
    elif img.ndim == 3 and img.shape[2] == 3:
        tag = b"PF"
    else:
        raise ImageFormatError(f"PFM holds 1 or 3 channels, got shape {img.shape}")
    H, W = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(tag + b"\n" + f"{W} {H}\n-1.0\n".encode())
        fh.write(np.ascontiguousarray(img[::-1], dtype="<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if len(parts) < 4 or parts[0] not in (b"PF", b"Pf"):
        raise ImageFormatError(f"{path}: not a PFM file")
    try:
        W, H = (int(t) for t in parts[1].split())
        scale = float(parts[2])
    except ValueError as exc:
        raise ImageFormatError(f"{path}: malformed PFM header") from exc
    ch = 3 if parts[0] == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    body = parts[3]
    if len(body) != W * H * ch * 4:
        raise ImageFormatError(f"{path}: expected {W * H * ch * 4} bytes of pixels, found {len(body)}")
    img = np.frombuffer(body, dtype=dtype).reshape((H, W, ch) if ch == 3 else (H, W))[::-1]
    return img.astype(np.float64)


def load_env(path) -> EnvMap:
    path = Path(path)
    if path.suffix.lower() == ".hdr":
        return EnvMap(read_hdr(path))
    img = read_pfm(path)
    if img.ndim != 3:
        raise ImageFormatError(f"{path}: environment must have 3 channels")
    return EnvMap(img)


# -- Radiance RGBE (read only) ----------------------------------------------------

def rgbe_to_float(rgbe: np.ndarray) -> np.ndarray:
    """Decode RGBE bytes: c * 2^(e - 136), zero when e == 0."""
    rgbe = np.asarray(rgbe, dtype=np.int64)
    e = rgbe[..., 3]
    scale = np.where(e > 0, np.ldexp(1.0, (e - 136).astype(np.int32)), 0.0)
    return rgbe[..., :3].astype(np.float64) * scale[..., None]


_RES_RE = re.compile(rb"^-Y (\d+) \+X (\d+)$")


def read_hdr(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if not (raw.startswith(b"#?RADIANCE") or raw.startswith(b"#?RGBE")):
        raise ImageFormatError(f"{path}: missing Radiance signature")
    pos = 0
    while True:
        end = raw.find(b"\n", pos)
        if end < 0:
            raise ImageFormatError(f"{path}: header not terminated")
        line = raw[pos:end].strip()
        pos = end + 1
        if line.startswith(b"FORMAT="):
            if line != b"FORMAT=32-bit_rle_rgbe":
                raise ImageFormatError(f"{path}: unsupported format {line.decode(errors='replace')}")
        if not line and pos > 1:
            break
    end = raw.find(b"\n", pos)
    m = _RES_RE.match(raw[pos:end].strip())
    if m is None:
        raise ImageFormatError(f"{path}: unsupported resolution line")
    H, W = int(m.group(1)), int(m.group(2))
    data = np.frombuffer(raw, dtype=np.uint8, offset=end + 1)
    out = np.empty((H, W, 4), dtype=np.uint8)
    p = 0
    try:
        for y in range(H):
            head = data[p:p + 4]
            if W < 8 or W > 0x7FFF or head[0] != 2 or head[1] != 2 or head[2] & 0x80:
                out[y] = data[p:p + 4 * W].reshape(W, 4)     # flat scanline
                p += 4 * W
                continue
            if (int(head[2]) << 8 | int(head[3])) != W:
                raise ImageFormatError(f"{path}: scanline width mismatch at row {y}")
            p += 4
            for c in range(4):
                x = 0
                while x < W:
                    count = int(data[p])
                    p += 1
                    if count > 128:
                        count -= 128
                        out[y, x:x + count, c] = data[p]
                        p += 1
                    else:
                        out[y, x:x + count, c] = data[p:p + count]
                        p += count
                    x += count
    except (IndexError, ValueError) as exc:
        raise ImageFormatError(f"{path}: truncated pixel data") from exc
    return rgbe_to_float(out)
