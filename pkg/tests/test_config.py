import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from avatarkit.config import (
    Config, RegionMaterial, SceneConfig, TrainConfig, from_dict, load_config, save_config, to_dict,
)
from avatarkit.losses import LossWeights


def test_defaults_round_trip(tmp_path):
    cfg = Config()
    save_config(tmp_path / "c.toml", cfg)
    assert load_config(tmp_path / "c.toml") == cfg


def test_nested_overrides_round_trip(tmp_path):
    cfg = Config(scene=SceneConfig(shape="sphere", skin=RegionMaterial((0.6, 0.3, 0.2), 0.4, 0.5), frames=9),
                 train=TrainConfig(upsample=False, material_hidden=(16,), weights=LossWeights(rough=0.0)))
    save_config(tmp_path / "c.toml", cfg)
    back = load_config(tmp_path / "c.toml")
    assert back == cfg
    assert back.train.upsample is False
    assert isinstance(back.scene.skin.rho, tuple)


def test_partial_file_keeps_defaults(tmp_path):
    (tmp_path / "p.toml").write_text("[train]\nstage1_iterations = 7\n[train.weights]\nlaplacian = 0\n")
    cfg = load_config(tmp_path / "p.toml")
    assert cfg.train.stage1_iterations == 7
    assert cfg.train.weights.laplacian == 0.0 and cfg.train.weights.rgb == 1.0
    assert cfg.scene == SceneConfig()


def test_unknown_key_rejected():
    with pytest.raises(KeyError):
        from_dict(TrainConfig, {"stage3_iterations": 1})


@pytest.mark.parametrize("kw", [{"lr_vertex": 0.0}, {"lr_final_factor": 1.5}, {"upsample_fraction": 2.0},
                                {"light": "sun"}])
def test_train_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_material_validation():
    with pytest.raises(ValueError):
        RegionMaterial((1.2, 0.0, 0.0), 0.5, 0.5)
    with pytest.raises(ValueError):
        RegionMaterial((0.5, 0.5, 0.5), 0.01, 0.5)


@settings(max_examples=25, deadline=None)
@given(n1=st.integers(0, 10_000), lr=st.floats(1e-6, 1.0), frac=st.floats(0.0, 1.0), seed=st.integers(0, 2**31))
def test_train_round_trip_property(tmp_path_factory, n1, lr, frac, seed):
    cfg = TrainConfig(stage1_iterations=n1, lr_material=lr, upsample_fraction=frac, seed=seed)
    d = tmp_path_factory.mktemp("cfg")
    save_config(d / "t.toml", cfg)
    back = load_config(d / "t.toml", TrainConfig)
    assert back == cfg
    assert to_dict(back) == to_dict(cfg)
    assert np.float64(back.lr_material) == np.float64(lr)
