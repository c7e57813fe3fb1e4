import numpy as np
import pytest

from avatarkit.cli import THREAD_VARS, build_parser, main
from avatarkit.config import (
    Config, LightFitConfig, LutConfig, PrefilterConfig, SceneConfig, TrainConfig, save_config,
)
from avatarkit.metrics import read_metrics_csv

pytestmark = pytest.mark.slow

TINY = Config(
    scene=SceneConfig(resolution=24, frames=3, render_samples=8, gt_subdivisions=3, template_subdivisions=2),
    train=TrainConfig(stage1_iterations=3, stage2_iterations=2, batch_size=1, material_hidden=(8,),
                      deform_hidden=(8,), light_hidden=8, deform_warmup_iterations=2, log_every=0),
    lut=LutConfig(rows=8, cols=8, samples=1024),
    prefilter=PrefilterConfig(levels=(0.04, 0.5, 1.0), height=8, width=16, samples=64),
    light_fit=LightFitConfig(pairs=64, iterations=3, heldout=64),
)


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    save_config(d / "tiny.toml", TINY)
    return d


def run(workdir, *argv):
    assert main(["--config", str(workdir / "tiny.toml"), *argv]) == 0


@pytest.fixture(scope="module")
def pipeline(workdir):
    w = workdir
    run(w, "--out", str(w / "ds"), "gen-synthetic")
    run(w, "--out", str(w), "bake-fg-lut")
    run(w, "--out", str(w / "pf"), "prefilter-env", "--env", "studio")
    run(w, "--out", str(w), "fit-light", "--prefiltered", str(w / "pf"))
    run(w, "--out", str(w / "run"), "train", "--dataset", str(w / "ds"), "--lut", str(w / "fglut.bin"),
        "--light-init", str(w / "light.flrw"))
    return w


def test_pipeline_outputs(pipeline):
    w = pipeline
    assert (w / "ds" / "scene.toml").exists() and (w / "ds" / "preview" / "0002.png").exists()
    assert len(list((w / "pf").glob("mip_*.pfm"))) == 3
    assert (w / "run" / "stage1.flrw").exists() and (w / "run" / "stage2.flrw").exists()
    summary = read_metrics_csv(w / "run" / "summary.csv")[0]
    assert 0.0 < float(summary["normal_cos"]) <= 1.0


def test_render_metrics_normals(pipeline, capsys):
    w = pipeline
    model = str(w / "run" / "stage2.flrw")
    run(w, "--out", str(w / "r"), "render", "--dataset", str(w / "ds"), "--model", model,
        "--lut", str(w / "fglut.bin"), "--frames", "all")
    assert sorted(p.name for p in (w / "r").glob("*.pfm")) == ["0000.pfm", "0001.pfm", "0002.pfm"]
    run(w, "--out", str(w / "m"), "metrics", "--dataset", str(w / "ds"), "--renders", str(w / "r"))
    rows = read_metrics_csv(w / "m" / "metrics.csv")
    assert [r["frame"] for r in rows] == ["2"]           # test split of 3 frames
    run(w, "--out", str(w / "m"), "eval-normals", "--dataset", str(w / "ds"), "--model", model)
    assert "normal_cos," in capsys.readouterr().out


def test_relight_and_determinism(pipeline):
    w = pipeline
    args = ["relight", "--dataset", str(w / "ds"), "--model", str(w / "run" / "stage2.flrw"),
            "--lut", str(w / "fglut.bin"), "--env", "sky"]
    run(w, "--out", str(w / "a"), *args)
    run(w, "--out", str(w / "b"), *args)
    a = (w / "a" / "0002.pfm").read_bytes()
    assert a == (w / "b" / "0002.pfm").read_bytes() and (w / "a" / "0002_mask.png").exists()


def test_seed_changes_dataset(workdir):
    w = workdir
    run(w, "--seed", "5", "--out", str(w / "s5"), "gen-synthetic")
    run(w, "--seed", "6", "--out", str(w / "s6"), "gen-synthetic")
    a = np.load(w / "s5" / "frames" / "0000.npz")["image"]
    b = np.load(w / "s6" / "frames" / "0000.npz")["image"]
    assert not np.array_equal(a, b)


def test_missing_assets_are_named(pipeline, capsys, tmp_path, monkeypatch):
    workdir = pipeline
    monkeypatch.chdir(tmp_path)
    code = main(["render", "--dataset", str(workdir / "nowhere"), "--model", "m.flrw", "--lut", "x.bin"])
    assert code == 2 and "missing dataset directory" in capsys.readouterr().err
    assert not any(tmp_path.iterdir())            # nothing written on failure
    code = main(["render", "--dataset", str(workdir / "ds"), "--model", "m.flrw", "--lut", "x.bin"])
    assert code == 2 and "missing model checkpoint" in capsys.readouterr().err


def test_global_flags_after_subcommand(monkeypatch):
    for var in THREAD_VARS:
        monkeypatch.delenv(var, raising=False)
    args = build_parser().parse_args(["gen-synthetic", "--threads", "2", "--seed", "3"])
    assert args.threads == 2 and args.seed == 3 and args.config is None
    from avatarkit.cli import _set_threads
    _set_threads(args.threads)
    import os
    assert all(os.environ[v] == "2" for v in THREAD_VARS)
