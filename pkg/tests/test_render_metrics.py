import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from avatarkit.config import SceneConfig, TrainConfig
from avatarkit.envmap import EnvMap
from avatarkit.experiments import gt_splitsum_frame
from avatarkit.metrics import image_metrics, psnr, read_metrics_csv, ssim_map, to_display, write_metrics_csv
from avatarkit.model import AvatarModel
from avatarkit.nnkit import no_grad
from avatarkit.pbr import LutLight, PrefilteredEnv, bake_fg_lut, prefilter_env
from avatarkit.raster import PinholeCamera
from avatarkit.render import forward_frame, relight, render_frame
from avatarkit.scene import generate_scene, gt_gbuffer


# -- metrics ----------------------------------------------------------------------------

def test_identical_images():
    img = np.random.default_rng(0).random((24, 24, 3))
    m = image_metrics(img, img)
    assert m["l1"] == 0.0 and m["psnr"] == 99.0 and m["ssim"] == pytest.approx(1.0)


def test_constant_offset_is_20db():
    img = np.random.default_rng(1).random((24, 24, 3)) * 0.9
    assert image_metrics(img + 0.1, img)["psnr"] == pytest.approx(20.0)


def test_anticorrelated_checkerboard_ssim_near_minus_one():
    yy, xx = np.mgrid[:32, :32]
    a = ((yy + xx) % 2).astype(float)
    assert ssim_map(a, 1 - a).mean() < -0.95


def test_empty_mask_reports_absent():
    img = np.zeros((8, 8, 3))
    assert image_metrics(img, img, np.zeros((8, 8), bool)) == {}


def test_mask_restricts_region():
    a = np.zeros((16, 16, 3))
    b = a.copy()
    b[:8] = 1.0
    mask = np.zeros((16, 16), bool)
    mask[8:] = True
    assert image_metrics(a, b, mask)["l1"] == 0.0


@settings(max_examples=30, deadline=None)
@given(mse=st.floats(1e-9, 1.0))
def test_psnr_monotone_and_capped(mse):
    assert psnr(mse) >= psnr(mse * 2)
    assert psnr(0.0) == 99.0


def test_display_transform_and_csv(tmp_path):
    assert np.allclose(to_display(np.array([-1.0, 0.0, 1.0, 5.0])), [0, 0, 1, 1])
    rows = [{"frame": 0, "psnr": 31.5}, {"frame": 1, "psnr": 29.0, "ssim": 0.9}]
    write_metrics_csv(tmp_path / "m.csv", rows)
    back = read_metrics_csv(tmp_path / "m.csv")
    assert back[1]["ssim"] == "0.9" and back[0]["ssim"] == ""


# -- rendering --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def setup():
    sc = generate_scene(SceneConfig(resolution=32, frames=2, render_samples=8, gt_subdivisions=3))
    cfg = TrainConfig(material_hidden=(16,), deform_hidden=(16,), light_hidden=16)
    model = AvatarModel.create(sc.rig, cfg)
    lut = bake_fg_lut((16, 16), 1024)
    return sc, model, lut


def test_render_deterministic_and_background_black(setup):
    sc, model, lut = setup
    fr = sc.frames[0]
    a, ma = render_frame(model, fr.pose, fr.camera, model.neural_light(), lut)
    b, mb = render_frame(model, fr.pose, fr.camera, model.neural_light(), lut)
    assert np.array_equal(a, b) and np.array_equal(ma, mb)
    assert ma.any() and np.all(a[~ma] == 0)


def test_empty_coverage_camera(setup):
    sc, model, lut = setup
    cam = PinholeCamera.look_at((0, 0, 5), (0, 0, 10), fov_deg=30, width=16, height=16)   # looking away
    img, mask = render_frame(model, sc.frames[0].pose, cam, model.neural_light(), lut)
    assert not mask.any() and np.all(img == 0)


def test_missing_lut_named(setup):
    sc, model, _ = setup
    with pytest.raises(FileNotFoundError, match="FG lookup table"):
        render_frame(model, sc.frames[0].pose, sc.frames[0].camera, model.neural_light(), None)


def test_material_sticks_to_canonical_points(setup):
    """The canonical coordinate seen at a pixel is the deformed surface point's rest position."""
    sc, model, lut = setup
    fr = sc.frames[1]
    with no_grad():
        out = forward_frame(model, fr.pose, fr.camera, model.neural_light(), lut)
    v_c = model.canonical().data
    bary = out.gb.bary.reshape(-1, 3)[out.flat]
    fc = out.gb.face.reshape(-1)[out.flat]
    expect = np.einsum("pk,pkc->pc", bary, v_c[model.faces[fc]])
    assert np.allclose(out.x_c, expect, atol=1e-9)
    rho, _, _ = model.material(expect)
    assert np.allclose(out.rho.data, rho.data)


def _constant_prefiltered(c: float) -> PrefilteredEnv:
    levels = np.array([0.04, 0.5, 1.0])
    return PrefilteredEnv(levels, [np.full((8, 16, 3), c) for _ in levels])


def test_constant_light_gives_albedo_times_radiance_without_specular(setup):
    sc, model, lut = setup
    fr = sc.frames[0]
    light = LutLight(_constant_prefiltered(0.7))
    with no_grad():
        out = forward_frame(model, fr.pose, fr.camera, light, lut)
    assert np.allclose(out.shade.diffuse.data, 0.7) and np.allclose(out.shade.specular.data, 0.7)
    front = np.any(out.rgb.data != 0, axis=1)
    assert front.mean() > 0.9
    spec = out.rgb.data[front] - out.rho.data[front] * 0.7      # k * FG * 0.7, achromatic
    assert np.all(spec >= -1e-12)
    assert np.allclose(spec, spec[:, :1])


def test_relight_env_rotation_moves_highlight(setup):
    sc, model, lut = setup
    fr = sc.frames[0]
    H, W = 16, 32
    th = (np.arange(H) + 0.5) / H * np.pi
    ph = (np.arange(W) + 0.5) / W * 2 * np.pi
    env = np.full((H, W, 3), 0.05)
    env[np.abs(th - np.pi / 2)[:, None] + np.abs(ph - np.pi)[None] < 0.6] = 4.0     # one bright patch
    a, ma = relight(model, fr.pose, fr.camera, EnvMap(env), lut)
    b, mb = relight(model, fr.pose, fr.camera, EnvMap(np.roll(env, W // 2, axis=1)), lut)
    assert np.array_equal(ma, mb)
    assert not np.allclose(a[ma], b[mb])
    lum_a, lum_b = a.mean(-1), b.mean(-1)
    ya, xa = np.unravel_index(np.argmax(np.where(ma, lum_a, -1)), ma.shape)
    yb, xb = np.unravel_index(np.argmax(np.where(mb, lum_b, -1)), mb.shape)
    assert (ya, xa) != (yb, xb)


def test_gt_assets_match_generator_frames():
    """Ground-truth geometry and materials with the ground-truth environment light reproduce
    the Monte-Carlo frames up to the split-sum gap."""
    sc = generate_scene(SceneConfig(resolution=48, frames=2, render_samples=1024))
    lut = bake_fg_lut((64, 64), 4096)
    light = LutLight(prefilter_env(sc.env))
    for fr in sc.frames:
        img = gt_splitsum_frame(sc, fr, light, lut)
        assert image_metrics(to_display(img), to_display(fr.image), fr.mask)["psnr"] >= 38.0
        gb = gt_gbuffer(sc.cfg, sc.rig, sc.gt_mesh, sc.gt_fields, fr.pose, fr.camera)
        assert np.array_equal(gb.mask, fr.mask)
