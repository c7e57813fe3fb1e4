import numpy as np
import pytest

from avatarkit.config import SceneConfig
from avatarkit.deform import PoseExpr
from avatarkit.mesh import HAIR, SKIN
from avatarkit.scene import (
    chain_pose, generate_scene, gt_gbuffer, gt_material, load_scene, region_of, save_scene, scene_rig,
    split_indices,
)


def tiny(**kw) -> SceneConfig:
    base = dict(resolution=32, frames=4, render_samples=16, gt_subdivisions=3, template_subdivisions=2)
    base.update(kw)
    return SceneConfig(**base)


@pytest.fixture(scope="module")
def scene():
    return generate_scene(tiny())


def test_same_seed_bit_identical(scene):
    again = generate_scene(tiny())
    for a, b in zip(scene.frames, again.frames):
        assert np.array_equal(a.image, b.image) and np.array_equal(a.mask, b.mask)
        assert np.array_equal(a.pose.rotations, b.pose.rotations)


def test_masks_equal_gt_coverage(scene):
    for fr in scene.frames:
        gb = gt_gbuffer(scene.cfg, scene.rig, scene.gt_mesh, scene.gt_fields, fr.pose, fr.camera)
        assert np.array_equal(gb.mask, fr.mask)
        assert np.all(fr.image[~fr.mask] == 0)
        assert np.all(fr.image[fr.mask] >= 0)


def test_identity_trajectory_frames_identical():
    sc = generate_scene(tiny(bump_amplitude=0.0, yaw_deg=0.0, pitch_deg=0.0, jaw_deg=0.0, expr_scale=0.0))
    for fr in sc.frames[1:]:
        assert np.array_equal(fr.image, sc.frames[0].image)


def test_split_is_80_20_by_index():
    train, test = split_indices(75, 0.2)
    assert list(test) == list(range(60, 75)) and list(train) == list(range(60))
    train, test = split_indices(2, 0.2)
    assert len(train) == 1 and len(test) == 1


def test_regions_and_materials():
    cfg = SceneConfig()
    x = np.array([[0.0, 0.9, 0.0], [0.0, -0.5, 0.8], [0.0, 0.0, -0.85]])
    assert list(region_of(cfg, x)) == [HAIR, SKIN, HAIR]
    mat, labels = gt_material(cfg, x)
    assert np.all((mat.rho >= 0) & (mat.rho <= 1))
    assert np.allclose(mat.r[labels == SKIN], cfg.skin.r)
    sphere = SceneConfig(shape="sphere")
    assert np.all(region_of(sphere, x) == SKIN)


def test_chain_pose_composes_parent_rotation():
    rig = scene_rig(SceneConfig())
    local = np.stack([np.eye(3)] * rig.n_j)
    c, s = np.cos(0.3), np.sin(0.3)
    local[2] = np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])      # neck yaw
    pose = chain_pose(rig, local, np.zeros(rig.n_e))
    # head and jaw inherit the neck rotation and rotate about the neck joint
    for j in (0, 1, 2):
        assert np.allclose(pose.rotations[j], local[2])
    neck = rig.rest_joints[2]
    head = rig.rest_joints[0]
    moved = pose.rotations[0] @ (head - head) + head + pose.translations[0]
    assert np.allclose(moved, local[2] @ (head - neck) + neck)
    assert np.allclose(pose.rotations[3], np.eye(3))
    ident = chain_pose(rig, np.stack([np.eye(3)] * rig.n_j), np.zeros(rig.n_e))
    assert np.allclose(ident.translations, 0)


def test_save_load_round_trip(tmp_path, scene):
    save_scene(scene, tmp_path / "ds")
    assert (tmp_path / "ds" / "preview" / "0000.png").exists()
    back = load_scene(tmp_path / "ds")
    assert back.cfg == scene.cfg
    assert np.array_equal(back.train_idx, scene.train_idx)
    for a, b in zip(scene.frames, back.frames):
        assert np.array_equal(a.image, b.image) and np.array_equal(a.mask, b.mask)
        assert np.allclose(a.camera.R, b.camera.R)
    assert np.array_equal(back.env.data, scene.env.data)
    assert np.array_equal(back.gt_mesh.vertices, scene.gt_mesh.vertices)


def test_missing_dataset_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_scene(tmp_path)


def test_pose_identity_helper():
    p = PoseExpr.identity(4, 10)
    assert p.rotations.shape == (4, 3, 3) and p.psi.shape == (10,)
