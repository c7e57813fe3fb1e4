import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from avatarkit.envmap import EnvMap, ImageFormatError, procedural_env, texel_directions
from avatarkit.nnkit import Tensor
from avatarkit.nnkit.gradcheck import check_gradients
from avatarkit.pbr import (
    BrdfConfig, FgLut, FgLutError, LutLight, MaterialSample, PrefilteredEnv, bake_fg_lut, fresnel_schlick,
    ggx_ndf, load_fglut, load_prefiltered, prefilter_env, reference_shade, reflect, save_fglut,
    save_prefiltered, shade_splitsum, shade_splitsum_np, smith_g, sphere_gbuffer, srgb_decode, srgb_encode,
)
from avatarkit.pbr.oracle import fg_oracle_table
from avatarkit.pbr.prefilter import prefilter_level

unit3 = st.tuples(*[st.floats(-1, 1)] * 3).filter(lambda v: 0.1 < np.linalg.norm(v)).map(
    lambda v: np.asarray(v) / np.linalg.norm(v))


@pytest.fixture(scope="module")
def lut():
    return bake_fg_lut((32, 32), 1024, seed=0)


@pytest.fixture(scope="module")
def studio():
    return procedural_env("studio", 32, 64)


@pytest.fixture(scope="module")
def studio_pf(studio):
    return prefilter_env(studio, out_shape=(16, 32), samples=512)


# -- BRDF terms -----------------------------------------------------------------

def test_ggx_max_roughness_is_uniform():
    h = np.random.default_rng(1).random(100)
    np.testing.assert_allclose(ggx_ndf(h, 1.0), 1.0 / np.pi, rtol=0, atol=1e-12)


def test_ggx_peak_value():
    assert ggx_ndf(1.0, np.sqrt(0.5)) == pytest.approx(1.0 / (np.pi * 0.25), rel=1e-12)


@pytest.mark.parametrize("r", [0.3, 0.5, 1.0])
def test_ggx_projected_density_normalised(r):
    rng = np.random.default_rng(7)
    n = 100_000
    cos_h = (np.arange(n) + rng.random(n)) / n      # stratified, uniform over the hemisphere (pdf 1 / 2pi)
    est = np.mean(ggx_ndf(cos_h, r) * cos_h) * 2 * np.pi
    assert est == pytest.approx(1.0, abs=1e-2)


def test_smith_examples():
    assert smith_g(1.0, 1.0, 0.7) == pytest.approx(1.0)
    assert smith_g(0.5, 0.5, np.sqrt(0.5)) == pytest.approx(0.64)
    dots = np.linspace(0.1, 1.0, 10)
    np.testing.assert_allclose(smith_g(dots, dots[::-1], 0.04), 1.0, atol=1e-2)


def test_fresnel_examples():
    assert fresnel_schlick(1.0, 0.047) == pytest.approx(0.047)
    assert fresnel_schlick(0.0, 0.047) == pytest.approx(1.0)
    assert fresnel_schlick(0.5, 0.047) == pytest.approx(0.047 + 0.953 * 0.03125)


def test_reflect_examples():
    n = np.array([0.0, 0, 1])
    np.testing.assert_allclose(reflect(n, n), n)
    np.testing.assert_allclose(reflect(np.array([1.0, 0, 1]) / np.sqrt(2), n), np.array([-1.0, 0, 1]) / np.sqrt(2))


@given(unit3, unit3)
def test_reflect_is_isometry(w, n):
    assert np.linalg.norm(reflect(w, n)) == pytest.approx(1.0, abs=1e-12)


def test_brdf_config():
    cfg = BrdfConfig()
    assert (cfg.F0_skin, cfg.F0_default) == (0.028, 0.047)
    np.testing.assert_allclose(cfg.f0_for_labels(np.array([0, 1, 2])), [0.028, 0.047, 0.047])
    with pytest.raises(ValueError):
        BrdfConfig(F0_skin=1.5)


def test_material_ranges():
    with pytest.raises(ValueError):
        MaterialSample(np.array([[1.2, 0, 0]]), 0.5, 0.1)
    with pytest.raises(ValueError):
        MaterialSample(np.array([[0.2, 0, 0]]), 0.01, 0.1)


# -- colour -------------------------------------------------------------------------

def test_srgb_examples():
    assert srgb_encode(0.0) == 0.0
    assert srgb_encode(1.0) == pytest.approx(1.0, abs=1e-12)
    assert srgb_encode(0.0031308) == pytest.approx(0.04045, abs=1e-6)


@given(st.floats(0.0, 50.0))
def test_srgb_roundtrip(x):
    assert abs(srgb_decode(srgb_encode(x)) - x) < 1e-9 * max(1.0, x)


def test_srgb_tensor_matches_numpy_and_grad():
    x = Tensor(np.array([0.001, 0.002, 0.2, 0.7, 3.0]))
    np.testing.assert_allclose(srgb_encode(x).data, srgb_encode(x.data))
    np.testing.assert_allclose(srgb_decode(x).data, srgb_decode(x.data))
    assert check_gradients(lambda: srgb_encode(x).sum(), [x]) < 1e-6
    assert check_gradients(lambda: srgb_decode(x).sum(), [x]) < 1e-6


# -- FG-LUT -------------------------------------------------------------------------

def test_lut_deterministic_and_energy_bounded(lut):
    again = bake_fg_lut((32, 32), 1024, seed=0)
    assert np.array_equal(lut.table, again.table)
    assert (lut.table.sum(axis=-1) <= 1.0 + 1e-2).all()
    assert (lut.table >= 0).all()


def test_lut_rejects_few_samples():
    with pytest.raises(FgLutError):
        bake_fg_lut((4, 4), 100)


def test_lut_matches_independent_estimator_coarse(lut):
    ref = fg_oracle_table((32, 32), samples=100_000, seed=99)
    assert np.abs(ref - lut.table).max() < 2e-2


def test_lut_file_roundtrip(tmp_path, lut):
    save_fglut(tmp_path / "t.fglt", lut)
    back = load_fglut(tmp_path / "t.fglt")
    np.testing.assert_array_equal(back.table, lut.table.astype(np.float32))
    raw = (tmp_path / "t.fglt").read_bytes()
    (tmp_path / "bad.fglt").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FgLutError, match="magic"):
        load_fglut(tmp_path / "bad.fglt")
    (tmp_path / "short.fglt").write_bytes(raw[:-4])
    with pytest.raises(FgLutError, match="payload"):
        load_fglut(tmp_path / "short.fglt")


def test_lut_lookup_at_cell_centres(lut):
    R, C = lut.shape
    i, j = 5, 17
    np.testing.assert_allclose(lut.lookup((i + 0.5) / R, (j + 0.5) / C), lut.table[i, j], atol=1e-14)


def test_lut_lookup_gradient(lut):
    rng = np.random.default_rng(3)
    r = Tensor(rng.uniform(0.1, 0.9, 6))
    c = Tensor(rng.uniform(0.1, 0.9, 6))
    w = Tensor(rng.normal(size=(6, 2)))
    assert check_gradients(lambda: (lut.lookup_tensor(r, c) * w).sum(), [r, c], h=1e-7) < 1e-4


# -- pre-filtering -----------------------------------------------------------------

def test_prefilter_constant_env():
    pf = prefilter_env(EnvMap(np.full((16, 32, 3), 1.7)), out_shape=(8, 16), samples=256)
    for img in pf.images:
        np.testing.assert_allclose(img, 1.7, atol=1e-3)


def test_prefilter_mirror_level_matches_env(studio, studio_pf):
    ref = studio.lookup(texel_directions(16, 32))
    rel = np.abs(studio_pf.images[0] - ref) / ref
    assert np.median(rel) < 0.02


def test_prefilter_rough_level_is_irradiance(studio, studio_pf):
    d = texel_directions(16, 32)
    E = studio.irradiance_quadrature(d) / np.pi
    rel = np.abs(studio_pf.images[-1] - E) / E
    assert rel.max() < 0.02


def test_prefilter_single_texel_lobe():
    data = np.zeros((32, 64, 3))
    data[10, 20] = 500.0
    env = EnvMap(data)
    img = prefilter_level(env, 1.0, (32, 64), 2048)
    E = env.irradiance_quadrature(texel_directions(32, 64)) / np.pi
    peak = np.unravel_index(img[..., 0].argmax(), img.shape[:2])
    assert abs(peak[0] - 10) <= 2 and abs(peak[1] - 20) <= 2
    lobe = E[..., 0] > 0.1 * E[..., 0].max()
    assert np.median(np.abs(img - E)[lobe] / E[lobe]) < 0.15
    assert np.corrcoef(img[..., 0].ravel(), E[..., 0].ravel())[0, 1] > 0.98


def test_prefilter_rejects_bad_env():
    with pytest.raises(ImageFormatError):
        EnvMap(np.full((4, 8, 3), np.nan))


def test_prefiltered_lookup_levels(studio_pf):
    d = texel_directions(16, 32).reshape(-1, 3)[::7]
    lv = studio_pf.roughness
    np.testing.assert_allclose(studio_pf.lookup(d, lv[2]), studio_pf.images[2].reshape(-1, 3)[::7], atol=1e-12)
    mid = studio_pf.lookup(d, 0.5 * (lv[2] + lv[3]))
    np.testing.assert_allclose(mid, 0.5 * (studio_pf.lookup(d, lv[2]) + studio_pf.lookup(d, lv[3])), atol=1e-12)


def test_prefiltered_lookup_gradient(studio_pf):
    d = texel_directions(16, 32).reshape(-1, 3)[::50]
    r = Tensor(np.random.default_rng(0).uniform(0.1, 0.95, len(d)))
    w = Tensor(np.random.default_rng(1).normal(size=(len(d), 3)))
    assert check_gradients(lambda: (studio_pf.lookup_tensor(d, r) * w).sum(), [r], h=1e-7) < 1e-4
    rng = np.random.default_rng(2)
    dt = d + rng.normal(scale=0.05, size=d.shape)
    dt = Tensor(dt / np.linalg.norm(dt, axis=1, keepdims=True))
    assert check_gradients(lambda: (studio_pf.lookup_tensor(dt, r) * w).sum(), [dt, r], h=1e-7) < 1e-4


def test_prefiltered_cache_roundtrip(tmp_path, studio_pf):
    save_prefiltered(tmp_path, studio_pf)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names[0] == "mip_0_r0.040.pfm" and len(names) == 6
    back = load_prefiltered(tmp_path)
    np.testing.assert_allclose(back.roughness, studio_pf.roughness)
    np.testing.assert_allclose(back.images[3], studio_pf.images[3], rtol=1e-6)


def test_prefiltered_needs_two_levels():
    with pytest.raises(ValueError):
        PrefilteredEnv(np.array([0.5]), [np.zeros((2, 4, 3))])


# -- split-sum shading ----------------------------------------------------------------

def _sphere(res=24):
    n, v, mask = sphere_gbuffer(res)
    return n[mask], v[mask]


def _const_light(c):
    return LutLight(PrefilteredEnv(np.array([0.04, 1.0]), [np.full((4, 8, 3), c)] * 2))


def test_shade_lambertian_constant_env(lut):
    n, v = _sphere()
    rho = np.tile([0.3, 0.5, 0.9], (len(n), 1))
    out = shade_splitsum_np(rho, np.full(len(n), 0.5), np.zeros(len(n)), n, v, _const_light(2.0), lut, 0.047)
    np.testing.assert_allclose(out, rho * 2.0, rtol=1e-2)


def test_shade_black_cases(lut):
    n, v = _sphere()
    z = np.zeros(len(n))
    out = shade_splitsum_np(np.zeros((len(n), 3)), z + 0.5, z, n, v, _const_light(1.0), lut, 0.047)
    assert not out.any()
    back = shade_splitsum_np(np.ones((len(n), 3)), z + 0.5, z + 1, n, -v, _const_light(1.0), lut, 0.047)
    assert not back.any()


def test_shade_energy_and_homogeneity(lut, studio_pf):
    n, v = _sphere()
    N = len(n)
    rng = np.random.default_rng(0)
    rho, r, k = rng.random((N, 3)), rng.uniform(0.04, 1, N), np.ones(N)
    # specular factor alone, and albedo + intensity within the unit budget
    spec = shade_splitsum_np(rho * 0, r, k, n, v, _const_light(1.0), lut, 0.047)
    assert spec.max() <= 1.0 + 1e-2
    split = rng.random(N)
    both = shade_splitsum_np(np.tile(split[:, None], 3), r, 1 - split, n, v, _const_light(1.0), lut, 0.047)
    assert both.max() <= 1.0 + 1e-2
    a = shade_splitsum_np(rho, r, k, n, v, LutLight(studio_pf), lut, 0.047)
    scaled = PrefilteredEnv(studio_pf.roughness, [im * 3.0 for im in studio_pf.images])
    b = shade_splitsum_np(rho, r, k, n, v, LutLight(scaled), lut, 0.047)
    np.testing.assert_allclose(b, 3.0 * a, rtol=1e-12)


def test_shade_gradients(lut, studio_pf):
    rng = np.random.default_rng(2)
    N = 6
    n = rng.normal(size=(N, 3)) + [0, 0, 3]
    n = Tensor(n / np.linalg.norm(n, axis=1, keepdims=True))
    v = Tensor(np.tile([0.0, 0.0, 1.0], (N, 1)))
    rho, r, k = Tensor(rng.random((N, 3))), Tensor(rng.uniform(0.2, 0.9, N)), Tensor(rng.random(N))
    w = Tensor(rng.normal(size=(N, 3)))
    f = lambda: (shade_splitsum(rho, r, k, n, v, LutLight(studio_pf), lut, 0.047).rgb * w).sum()  # noqa: E731
    assert check_gradients(f, [rho, r, k], h=1e-7) < 1e-3


# -- reference integrator --------------------------------------------------------------

def test_reference_white_furnace():
    n, v = _sphere()
    mat = MaterialSample.uniform(len(n), (1, 1, 1), 0.5, 0.0)
    out = reference_shade(n, v, mat, 0.047, EnvMap(np.ones((8, 16, 3))), samples=256)
    np.testing.assert_allclose(out, 1.0, rtol=2e-2)


def test_reference_linear_and_chunk_invariant(studio):
    n, v = _sphere(16)
    mat = MaterialSample.uniform(len(n), (0.4, 0.4, 0.4), 0.3, 1.0)
    a = reference_shade(n, v, mat, 0.047, studio, samples=64, chunk=7)
    b = reference_shade(n, v, mat, 0.047, studio, samples=64, chunk=1000)
    assert np.array_equal(a, b)
    np.testing.assert_allclose(reference_shade(n, v, mat, 0.047, studio.scaled(2.0), samples=64), 2 * a, rtol=1e-12)


def test_reference_specular_matches_splitsum_under_constant_env(lut):
    n, v = _sphere()
    N = len(n)
    mat = MaterialSample.uniform(N, (0, 0, 0), 0.5, 1.0)
    ref = reference_shade(n, v, mat, 0.047, EnvMap(np.ones((8, 16, 3))), samples=1024)
    ss = shade_splitsum_np(mat.rho, mat.r, mat.k, n, v, _const_light(1.0), lut, 0.047)
    assert np.median(np.abs(ss - ref) / ref) < 0.05


def test_reference_mirror_highlight_hits_bright_texel(lut):
    data = np.full((32, 64, 3), 0.01)
    d = texel_directions(32, 64)
    bright = np.array([0.0, 0.0, 1.0])                 # towards the camera
    data[np.sum(d * bright, axis=-1) > 0.995] = 50.0
    env = EnvMap(data)
    normals, view, mask = sphere_gbuffer(32)
    n, v = normals[mask], view[mask]
    mat = MaterialSample.uniform(len(n), (0, 0, 0), 0.04, 1.0)
    ref = reference_shade(n, v, mat, 0.047, env, samples=64)
    pf = prefilter_env(env, out_shape=(32, 64), samples=256)
    ss = shade_splitsum_np(mat.rho, mat.r, mat.k, n, v, LutLight(pf), lut, 0.047)
    w_r = reflect(v, n)
    hit = np.argmax(np.sum(w_r * bright, axis=-1))
    assert np.argmax(ref[:, 0]) == hit or np.sum(w_r[np.argmax(ref[:, 0])] * bright) > 0.99
    assert np.sum(w_r[np.argmax(ss[:, 0])] * bright) > 0.99
