"""Neural pre-filtered light: integrated directional encoding (spherical harmonics
attenuated by a von Mises-Fisher lobe of concentration 1/r) followed by a small
MLP whose output lives in log-sRGB space."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre as npleg
from numpy.polynomial import polynomial as nppoly

from .envmap import EnvMap, load_env, read_hdr, read_pfm, write_pfm  # noqa: F401  (re-exported I/O)
from .nnkit import Adam, Mlp, RawEncoding, Tensor, ad, no_grad
from .pbr.brdf import R_MIN
from .pbr.color import srgb_decode, srgb_encode
from .pbr.prefilter import PrefilteredEnv

IDE_BANDS = (1, 2, 4, 8, 16)


@lru_cache(maxsize=None)
def _sh_table(bands: tuple[int, ...]):
    """Per feature: (l, m, normalisation, Q coeffs, dQ/dz coeffs) with Q = d^|m| P_l / dz^|m|."""
    rows = []
    for l in bands:
        for m in range(-l, l + 1):
            am = abs(m)
            k = math.sqrt((2 * l + 1) / (4 * math.pi) * math.factorial(l - am) / math.factorial(l + am))
            if m != 0:
                k *= math.sqrt(2.0)
            q = npleg.leg2poly(npleg.legder(np.eye(l + 1)[l], am)) if am <= l else np.zeros(1)
            rows.append((l, m, k, q, nppoly.polyder(q) if len(q) > 1 else np.zeros(1)))
    return rows


def _planar_powers(x, y, m_max):
    """Re/Im of (x + i y)^m for m = 0..m_max, shape (m_max + 1, ...)."""
    w = x + 1j * y
    out = np.empty((m_max + 1,) + np.shape(x), dtype=np.complex128)
    out[0] = 1.0
    for m in range(1, m_max + 1):
        out[m] = out[m - 1] * w
    return out


def sh_basis(dirs: np.ndarray, bands=None, l_max: int | None = None, with_grad: bool = False):
    """Real orthonormal spherical harmonics (z is the polar axis), orders m = -l..l.

    ``bands`` lists the degrees to evaluate; ``l_max`` means all degrees 0..l_max.
    With ``with_grad`` also returns d Y / d dir of shape (..., F, 3), treating Y as
    the homogeneous polynomial in (x, y, z).
    """
    if bands is None:
        bands = tuple(range(l_max + 1)) if l_max is not None else IDE_BANDS
    table = _sh_table(tuple(bands))
    d = np.asarray(dirs, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    m_max = max(abs(t[1]) for t in table)
    pw = _planar_powers(x, y, m_max)
    vals = np.empty(d.shape[:-1] + (len(table),))
    grads = np.empty(d.shape[:-1] + (len(table), 3)) if with_grad else None
    for f, (l, m, k, q, dq) in enumerate(table):
        am = abs(m)
        qz = nppoly.polyval(z, q)
        t = pw[am].real if m >= 0 else pw[am].imag
        vals[..., f] = k * qz * t
        if with_grad:
            if am > 0:
                prev = pw[am - 1]
                tx = am * (prev.real if m >= 0 else prev.imag)
                ty = am * (-prev.imag if m >= 0 else prev.real)
            else:
                tx = ty = np.zeros_like(x)
            grads[..., f, 0] = k * qz * tx
            grads[..., f, 1] = k * qz * ty
            grads[..., f, 2] = k * nppoly.polyval(z, dq) * t
    return (vals, grads) if with_grad else vals


def band_degrees(bands=IDE_BANDS) -> np.ndarray:
    return np.array([t[0] for t in _sh_table(tuple(bands))], dtype=np.float64)


def vmf_attenuation(l, r):
    """Closed-form band attenuation exp(-l(l+1) r / 2) for concentration 1/r."""
    return np.exp(-0.5 * np.asarray(l) * (np.asarray(l) + 1.0) * np.asarray(r))


def vmf_attenuation_exact(l: int, kappa: float) -> float:
    """Exact vMF expectation of the degree-l zonal harmonic relative to its peak,
    I_{l+1/2}(kappa) / I_{1/2}(kappa), via exponentially scaled Bessel functions."""
    from scipy.special import ive
    return float(ive(l + 0.5, kappa) / ive(0.5, kappa))


def ide_encode(dirs, r, bands=IDE_BANDS) -> Tensor:
    """Feature (l, m) = A_l(r) Y_l^m(dir); differentiable in dirs and r."""
    dirs, r = ad.as_tensor(dirs), ad.as_tensor(r)
    need_grad = dirs.requires_grad or r.requires_grad
    res = sh_basis(dirs.data, bands, with_grad=dirs.requires_grad)
    Y, dY = res if dirs.requires_grad else (res, None)
    ls = band_degrees(bands)
    rr = np.broadcast_to(r.data, dirs.shape[:-1])[..., None]
    A = vmf_attenuation(ls, rr)
    out = A * Y
    if not need_grad:
        return Tensor(out)

    def bw(g):
        gd = np.einsum("...f,...fc->...c", g * A, dY) if dirs.requires_grad else None
        gr = None
        if r.requires_grad:
            gr = ad._unbroadcast(np.sum(g * out * (-0.5 * ls * (ls + 1.0)), axis=-1), r.shape)
        return gd, gr
    return Tensor.from_op(out, (dirs, r), bw, "ide_encode")


IDE_WIDTH = sum(2 * l + 1 for l in IDE_BANDS)


def make_light_net(rng: np.random.Generator | None = None, hidden: int = 64, layers: int = 2) -> Mlp:
    """IDE -> hidden layers -> log-sRGB. The output layer starts at zero, so an
    untrained light is exactly constant (unit radiance)."""
    net = Mlp(RawEncoding(IDE_WIDTH), [hidden] * layers + [3], rng=rng, name="light")
    net.weights[-1].data[...] = 0.0
    return net


class NeuralLight:
    """Light query L(dir, r) = srgb_decode(exp(net(ide(dir, r))))."""

    def __init__(self, net: Mlp):
        if net.in_dim != IDE_WIDTH:
            raise ValueError(f"lighting net expects {net.in_dim} inputs, IDE has {IDE_WIDTH}")
        self.net = net

    def log_srgb(self, dirs, r) -> Tensor:
        return self.net(ide_encode(dirs, r))

    def __call__(self, dirs, r) -> Tensor:
        return srgb_decode(ad.exp(self.log_srgb(dirs, r)))


def light_query_neural(net: Mlp, dirs, r) -> np.ndarray:
    with no_grad():
        return NeuralLight(net)(np.asarray(dirs, dtype=np.float64), np.asarray(r, dtype=np.float64)).data


def light_query_lut(pf: PrefilteredEnv, dirs, r) -> np.ndarray:
    return pf.lookup(np.asarray(dirs, dtype=np.float64), r)


def log_srgb_target(linear: np.ndarray, floor: float = 1e-4) -> np.ndarray:
    return np.log(np.maximum(srgb_encode(linear), floor))


def random_queries(n: int, rng: np.random.Generator, r_min: float = R_MIN) -> tuple[np.ndarray, np.ndarray]:
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d, rng.uniform(r_min, 1.0, n)


@dataclass
class LightFitReport:
    iterations: int
    train_loss: float
    heldout_rel_l2: float


def relative_l2(pred: np.ndarray, ref: np.ndarray) -> float:
    return float(np.linalg.norm(pred - ref) / np.linalg.norm(ref))


def fit_light(net: Mlp, pf: PrefilteredEnv, n_pairs: int = 10_000, iterations: int = 2000, lr: float = 5e-3,
              seed: int = 0, n_heldout: int = 10_000) -> LightFitReport:
    """Supervise the lighting net on random (dir, r) pairs of a pre-filtered env.

    The loss is L2 in log-sRGB space (the net's output space); the report gives
    the relative L2 error in linear radiance on an independent held-out set.
    """
    rng = np.random.default_rng(seed)
    d, r = random_queries(n_pairs, rng)
    feats = ide_encode(d, r)
    target = Tensor(log_srgb_target(pf.lookup(d, r)))
    opt = Adam()
    opt.add_group("light", net.parameters(), lr)
    loss_val = float("nan")
    for it in range(iterations):
        frac = it / max(iterations - 1, 1)
        opt.groups["light"].lr = lr * (0.05 ** frac)      # geometric decay to 5% of the initial rate
        opt.zero_grad()
        diff = net(feats) - target
        loss = (diff * diff).mean()
        loss.backward()
        opt.step()
        loss_val = float(loss.data)
    dh, rh = random_queries(n_heldout, np.random.default_rng(seed + 1_000_003))
    err = relative_l2(light_query_neural(net, dh, rh), pf.lookup(dh, rh))
    return LightFitReport(iterations, loss_val, err)
