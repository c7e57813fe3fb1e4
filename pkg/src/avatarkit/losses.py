"""Training objectives: photometric, mask, image-pyramid, mesh regularisers,
blend-field prior, light and material priors, and their weighted sum."""
from __future__ import annotations

import csv
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .deform import BlendFields
from .nnkit import Tensor, ad, barron_robust

LOG_EPS = 1e-4


@dataclass
class LossWeights:
    rgb: float = 1.0
    vgg: float = 0.1            # weight of the image-pyramid loss
    mask: float = 2.0
    flame: float = 5.0
    laplacian: float = 60.0
    normal: float = 0.1
    smooth: float = 0.01
    rough: float = 0.01
    spec: float = 0.01
    light: float = 0.01
    lambda_e: float = 50.0
    lambda_p: float = 50.0
    lambda_w: float = 2.5
    mu_rough: float = 0.5
    sigma_rough: float = 0.1
    mu_spec: float = 0.3753
    sigma_spec: float = 0.1655

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"loss weight {f.name} must be >= 0")
        if self.sigma_rough <= 0 or self.sigma_spec <= 0:
            raise ValueError("prior widths must be positive")

    def term_weights(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in TERMS}


TERMS = ("rgb", "vgg", "mask", "flame", "laplacian", "normal", "smooth", "rough", "spec", "light")


# -- image terms ----------------------------------------------------------------------

def loss_rgb_log(pred, target, mask=None) -> Tensor:
    """Mean over masked pixels of ||log(I + eps) - log(I_gt + eps)||^2."""
    pred = ad.as_tensor(pred)
    target = np.asarray(target, dtype=np.float64)
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        if not m.any():
            warnings.warn("loss_rgb_log: empty mask, returning 0", RuntimeWarning, stacklevel=2)
            return Tensor(0.0)
        idx = np.flatnonzero(m.ravel())
        pred = ad.take_rows(ad.reshape(pred, (-1, pred.shape[-1])), idx)
        target = target.reshape(-1, target.shape[-1])[idx]
    d = ad.log(pred + LOG_EPS) - Tensor(np.log(target + LOG_EPS))
    return ad.tsum(d * d) * (1.0 / (d.data.size // d.shape[-1]))


def loss_mask(pred_mask, gt_mask) -> Tensor:
    a = ad.as_tensor(np.asarray(pred_mask, dtype=np.float64) if not isinstance(pred_mask, Tensor) else pred_mask)
    d = a - Tensor(np.asarray(gt_mask, dtype=np.float64))
    return ad.mean(d * d)


def _pyramid_operator(n: int) -> np.ndarray:
    """Dense (ceil(n/2), n) matrix: 5-tap binomial blur with renormalised borders, then stride 2."""
    k = np.array([1.0, 4.0, 6.0, 4.0, 1.0])
    out = np.zeros(((n + 1) // 2, n))
    for row, c in enumerate(range(0, n, 2)):
        for o, w in zip(range(-2, 3), k):
            if 0 <= c + o < n:
                out[row, c + o] += w
        out[row] /= out[row].sum()
    return out


def gaussian_pyramid(img, levels: int = 4) -> list[Tensor]:
    img = ad.as_tensor(img)
    pyr = [img]
    for _ in range(levels - 1):
        cur = pyr[-1]
        Dh = Tensor(_pyramid_operator(cur.shape[0]))
        Dw = Tensor(_pyramid_operator(cur.shape[1]))
        cur = ad.einsum("ah,hwc->awc", Dh, cur)
        pyr.append(ad.einsum("bw,awc->abc", Dw, cur))
    return pyr


def loss_pyramid(pred, target, levels: int = 4) -> Tensor:
    """Mean squared difference per Gaussian-pyramid level, averaged over levels."""
    pp = gaussian_pyramid(pred, levels)
    tp = gaussian_pyramid(Tensor(np.asarray(target, dtype=np.float64)), levels)
    total = None
    for a, b in zip(pp, tp):
        d = a - Tensor(b.data)
        t = ad.mean(d * d)
        total = t if total is None else total + t
    return total * (1.0 / levels)


# -- geometry terms -------------------------------------------------------------------

def loss_laplacian(vertices, L: sp.spmatrix) -> Tensor:
    """(1/M) sum_i ||delta_i||^2 with delta = L v (uniform Laplacian)."""
    d = ad.sparse_matmul(L, vertices)
    return ad.tsum(d * d) * (1.0 / d.shape[0])


def face_normals_tensor(vertices, faces: np.ndarray) -> Tensor:
    v = ad.as_tensor(vertices)
    v0, v1, v2 = (ad.take_rows(v, faces[:, k]) for k in range(3))
    return ad.normalize(ad.cross(v1 - v0, v2 - v0))


def loss_normal_consistency(vertices, faces: np.ndarray, face_pairs: np.ndarray) -> Tensor:
    """Mean over edge-adjacent face pairs of (1 - n_i . n_j)^2."""
    if len(face_pairs) == 0:
        return Tensor(0.0)
    n = face_normals_tensor(vertices, faces)
    c = ad.dot(ad.take_rows(n, face_pairs[:, 0]), ad.take_rows(n, face_pairs[:, 1]), keepdims=False)
    d = 1.0 - c
    return ad.mean(d * d)


# -- blend-field prior ----------------------------------------------------------------

def loss_flame_reg(E, P, W, pseudo: BlendFields, lambda_e: float = 50.0, lambda_p: float = 50.0,
                   lambda_w: float = 2.5) -> Tensor:
    """(1/M) sum_i (l_e ||E_i - E^_i|| + l_p ||P_i - P^_i|| + l_w ||W_i - W^_i||), unsquared norms."""
    M = pseudo.E.shape[0]

    def term(x, ref):
        x = ad.as_tensor(x)
        d = ad.reshape(x - Tensor(ref), (M, -1))
        return ad.tsum(ad.norm(d, axis=-1, keepdims=False))
    total = term(E, pseudo.E) * lambda_e + term(P, pseudo.P) * lambda_p + term(W, pseudo.W) * lambda_w
    return total * (1.0 / M)


# -- light and material priors --------------------------------------------------------

def loss_light_white(diffuse_shading) -> Tensor:
    """(1/3) sum_c |mean_c - mean over channels| of the per-channel average shading."""
    s = ad.as_tensor(diffuse_shading)
    cbar = ad.mean(ad.reshape(s, (-1, s.shape[-1])), axis=0)
    return ad.mean(ad.tabs(cbar - ad.mean(cbar)))


def loss_stat_reg(x, mu: float, sigma: float) -> Tensor:
    """Mean absolute z-score |x - mu| / sigma."""
    return ad.mean(ad.tabs(ad.as_tensor(x) - mu)) * (1.0 / sigma)


def loss_smooth(material_fn: Callable, x_c: np.ndarray, displacement_sigma: float = 0.01,
                rng: np.random.Generator | None = None, alpha: float = 1.0, c: float = 0.01) -> Tensor:
    """Robust penalty on albedo and roughness change under a random displacement.

    ``material_fn(x)`` returns (rho (N, 3), r (N,) or (N, 1), ...) Tensors.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    x_c = np.asarray(x_c, dtype=np.float64)
    eps = rng.normal(scale=displacement_sigma, size=x_c.shape) if displacement_sigma > 0 else np.zeros_like(x_c)
    both = material_fn(np.concatenate([x_c, x_c + eps]))
    n = len(x_c)
    out = None
    for q in both[:2]:
        a = ad.getitem(q, slice(0, n))
        b = ad.getitem(q, slice(n, 2 * n))
        d = ad.tabs(a - b)
        l1 = ad.tsum(d, axis=-1) if d.data.ndim > 1 else d
        t = ad.mean(barron_robust(l1, alpha, c))
        out = t if out is None else out + t
    return out


# -- weighted sum and reporting -------------------------------------------------------

@dataclass
class LossReport:
    terms: dict[str, float]
    total: float
    iteration: int = 0
    extra: dict[str, float] = field(default_factory=dict)

    def row(self) -> dict[str, float]:
        return {"iteration": self.iteration, **{k: self.terms.get(k, 0.0) for k in TERMS}, "total": self.total}


def total_loss(terms: dict[str, Tensor], weights: LossWeights, iteration: int = 0) -> tuple[Tensor, LossReport]:
    """Weighted sum over the named terms; every term is also reported unweighted."""
    unknown = set(terms) - set(TERMS)
    if unknown:
        raise KeyError(f"unknown loss terms {sorted(unknown)}")
    w = weights.term_weights()
    total = Tensor(0.0)
    for k, t in terms.items():
        if w[k] != 0.0:
            total = total + ad.as_tensor(t) * w[k]
    vals = {k: float(np.asarray(ad.as_tensor(t).data)) for k, t in terms.items()}
    return total, LossReport(vals, float(total.data), iteration)


class LossCsv:
    """Per-iteration CSV log: iteration, each term, total."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", newline="")
        self._w = csv.DictWriter(self._fh, fieldnames=["iteration", *TERMS, "total"])
        self._w.writeheader()

    def write(self, report: LossReport) -> None:
        self._w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in report.row().items()})
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_loss_csv(path) -> list[dict[str, float]]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def weights_dict(w: LossWeights) -> dict[str, float]:
    return asdict(w)
