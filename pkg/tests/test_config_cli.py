import re

import numpy as np
import pytest
import yaml

from sliceinterp.cli import interpolate_volume, main
from sliceinterp.config import ConfigError, ExperimentConfig, parse_config
from sliceinterp.metrics import read_graymap
from sliceinterp.training import baseline_predictor
from sliceinterp.volume import Volume, load_volume, save_volume

TINY = """\
seed: 3
data:
  n_volumes: 8
  phantom: {height: 16, width: 16, n_slices: 12}
  min_slices: 10
model:
  arch: unet
  base_channels: 4
train:
  epochs: 2
  batch_size: 8
  lr: 0.001
"""


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(TINY)
    return path


def run(*argv):
    return main([str(a) for a in argv])


# -- config parsing ------------------------------------------------------------------------


def test_unknown_key_reports_line():
    with pytest.raises(ConfigError, match=r"x.yaml:3: unknown key 'colour' in data"):
        parse_config("seed: 1\ndata:\n  colour: red\n", "x.yaml")
    with pytest.raises(ConfigError, match=r":2: unknown key 'depth' in model"):
        parse_config("model:\n  depth: 3\n", "c")
    with pytest.raises(ConfigError, match=r":1: unknown key 'extra' in top level"):
        parse_config("extra: 1\n", "c")


def test_config_value_errors():
    with pytest.raises(ConfigError):
        parse_config("scale: huge\n")
    with pytest.raises(ConfigError):
        parse_config("data:\n  source: directory\n")
    with pytest.raises(ConfigError):
        parse_config("[1, 2]\n")
    with pytest.raises(ConfigError):
        parse_config("eval:\n  split: holdout\n")
    with pytest.raises(ConfigError, match="model.arch"):
        ExperimentConfig().model_config()


def test_scale_presets():
    cfg = parse_config("model:\n  arch: ddpm_unet\n")
    assert cfg.model_config().base_channels == 16 and cfg.train_config().diffusion_steps == 25
    cfg.scale = "paper"
    assert cfg.model_config().base_channels == 64 and cfg.train_config().diffusion_steps == 100


def test_resolved_config_round_trips(tiny_config, tmp_path):
    cfg = parse_config(tiny_config.read_text())
    path = cfg.write_resolved(tmp_path)
    again = parse_config(path.read_text())
    assert again.resolved("unet") == cfg.resolved("unet")


# -- commands ---------------------------------------------------------------------------


def test_phantom_command(tmp_path):
    assert run("phantom", "--n", 20, "--slices", 6, "--height", 16, "--width", 16, "--seed", 9, "--out", tmp_path / "a") == 0
    assert run("phantom", "--n", 20, "--slices", 6, "--height", 16, "--width", 16, "--seed", 9, "--out", tmp_path / "b") == 0
    files = sorted((tmp_path / "a").glob("*.svol"))
    assert len(files) == 20
    assert len({load_volume(f).patient_id for f in files}) == 20
    for f in files:
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
    manifest = yaml.safe_load((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["params"]["n_slices"] == 6 and manifest["master_seed"] == 9


def test_train_missing_arch_exit_2(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("model:\n  base_channels: 4\n")
    assert run("train", "--config", cfg, "--out", tmp_path / "o") == 2
    assert "model.arch" in capsys.readouterr().err


def test_train_unknown_key_exit_2(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("model:\n  arch: unet\n  widht: 3\n")
    assert run("train", "--config", cfg) == 2
    assert "c.yaml:3" in capsys.readouterr().err


def test_train_eval_and_reproducibility(tiny_config, tmp_path, capsys):
    for name in ("r1", "r2"):
        assert run("train", "--config", tiny_config, "--seed", 11, "--out", tmp_path / name) == 0
    hist = (tmp_path / "r1" / "history.csv").read_text()
    assert len(hist.strip().split("\n")) == 1 + 2 and "\r" not in hist
    assert hist == (tmp_path / "r2" / "history.csv").read_text()
    resolved = yaml.safe_load((tmp_path / "r1" / "resolved_config.yaml").read_text())
    assert resolved["seed"] == 11 and resolved["model"]["arch"] == "unet"
    ckpt = tmp_path / "r1" / "checkpoint.smdl"
    assert ckpt.read_bytes() == (tmp_path / "r2" / "checkpoint.smdl").read_bytes()

    capsys.readouterr()
    for name in ("e1", "e2"):
        assert run("eval", "--config", tiny_config, "--checkpoint", ckpt, "--out", tmp_path / name) == 0
    line = capsys.readouterr().out.strip().split("\n")[-1]
    assert re.fullmatch(r"unet k=1 PSNR \d+\.\d\d±\d+\.\d\d SSIM \d\.\d{4}±\d\.\d{4}", line)
    assert (tmp_path / "e1" / "unet_k1_samples.csv").read_bytes() == (tmp_path / "e2" / "unet_k1_samples.csv").read_bytes()

    rerun = tmp_path / "r1" / "resolved_config.yaml"
    assert run("train", "--config", rerun, "--out", tmp_path / "r3") == 0
    assert (tmp_path / "r3" / "history.csv").read_text() == hist

    assert run("eval", "--config", tiny_config, "--checkpoint", ckpt, "--arch", "edsr", "--out", tmp_path / "x") == 3
    assert run("eval", "--config", tiny_config, "--checkpoint", tmp_path / "none.smdl", "--out", tmp_path / "x") == 3


def test_eval_baseline_needs_no_checkpoint(tiny_config, tmp_path):
    assert run("eval", "--config", tiny_config, "--baseline", "linear", "--out", tmp_path) == 0
    rows = (tmp_path / "linear_k1_samples.csv").read_text().strip().split("\n")
    cfg = parse_config(TINY)
    from sliceinterp.cli import _dataset

    assert len(rows) - 1 == len(_dataset(cfg).splits["test"])
    summary = (tmp_path / "linear_k1_summary.txt").read_text().split("\n")
    assert summary[0].startswith("# ssim window=11") and summary[1].startswith("linear k=1 PSNR ")


def test_eval_on_volume_directory(tmp_path):
    run("phantom", "--n", 6, "--slices", 20, "--height", 16, "--width", 16, "--out", tmp_path / "vols")
    assert run("eval", "--data", tmp_path / "vols", "--baseline", "nearest", "--out", tmp_path / "ev") == 0
    assert run("eval", "--data", tmp_path / "empty", "--baseline", "nearest", "--out", tmp_path / "ev") == 4


def test_ablate_command(tmp_path, capsys):
    cfg = tmp_path / "a.yaml"
    cfg.write_text(TINY.replace("epochs: 2", "epochs: 1") + "ablation:\n  archs: [unet, edsr]\n  ks: [1, 2]\n")
    assert run("ablate", "--config", cfg, "--out", tmp_path / "a1") == 0
    assert run("ablate", "--config", cfg, "--out", tmp_path / "a2") == 0
    table = (tmp_path / "a1" / "ablation.csv").read_text()
    assert table == (tmp_path / "a2" / "ablation.csv").read_text()
    assert [l.split(",")[0] for l in table.strip().split("\n")] == ["arch", "unet", "edsr", "improvement"]


def test_interpolate_arithmetic(tmp_path):
    vox = np.random.default_rng(0).random((6, 16, 16)).astype(np.float32)
    save_volume(Volume("V", vox, 1.0, 1.5), tmp_path / "v.svol")
    assert run("interpolate", "--baseline", "linear", "--volume", tmp_path / "v.svol", "--out", tmp_path / "u.svol") == 0
    up = load_volume(tmp_path / "u.svol")
    assert up.n_slices == 11 and up.slice_mm == 0.75
    assert up.voxels[0::2].tobytes() == vox.tobytes()
    np.testing.assert_allclose(up.voxels[1::2], (vox[:-1] + vox[1:]) / 2, rtol=1e-6)


def test_interpolate_single_slice_rejected(tmp_path):
    save_volume(Volume("V", np.zeros((1, 16, 16))), tmp_path / "v.svol")
    assert run("interpolate", "--baseline", "linear", "--volume", tmp_path / "v.svol", "--out", tmp_path / "u.svol") == 4
    with pytest.raises(ValueError):
        interpolate_volume(Volume("V", np.zeros((1, 4, 4))), baseline_predictor("linear"))


def test_interpolate_with_trained_checkpoint(tiny_config, tmp_path):
    assert run("train", "--config", tiny_config, "--out", tmp_path / "r") == 0
    save_volume(Volume("V", np.random.default_rng(1).random((6, 16, 16))), tmp_path / "v.svol")
    args = ("interpolate", "--checkpoint", tmp_path / "r" / "checkpoint.smdl", "--volume", tmp_path / "v.svol")
    assert run(*args, "--out", tmp_path / "u1.svol") == 0
    assert run(*args, "--out", tmp_path / "u2.svol") == 0
    assert (tmp_path / "u1.svol").read_bytes() == (tmp_path / "u2.svol").read_bytes()
    assert load_volume(tmp_path / "u1.svol").n_slices == 11


def test_metrics_and_ssim_map(tmp_path, capsys):
    vox = np.random.default_rng(2).random((4, 16, 16)).astype(np.float32)
    save_volume(Volume("A", vox), tmp_path / "a.svol")
    save_volume(Volume("B", vox), tmp_path / "b.svol")
    save_volume(Volume("C", vox[:3]), tmp_path / "c.svol")
    assert run("metrics", tmp_path / "a.svol", tmp_path / "b.svol", "--out", tmp_path / "m.csv") == 0
    rows = (tmp_path / "m.csv").read_text().strip().split("\n")
    assert rows[0] == "slice,psnr_db,ssim" and len(rows) == 1 + 4
    assert all(r.split(",")[2] == "1" for r in rows[1:])
    assert run("metrics", tmp_path / "a.svol", tmp_path / "c.svol") == 4
    assert run("ssim-map", tmp_path / "a.svol", tmp_path / "b.svol", "--slice", 1, "--out", tmp_path / "maps") == 0
    pix = read_graymap(tmp_path / "maps" / "ssim_map_001.pgm")
    assert pix.shape == (16, 16) and (pix == 255).all()
    assert run("ssim-map", tmp_path / "a.svol", tmp_path / "c.svol", "--out", tmp_path / "maps") == 4
    assert run("ssim-map", tmp_path / "a.svol", tmp_path / "b.svol", "--slice", 9, "--out", tmp_path / "maps") == 4


def test_missing_volume_is_data_error(tmp_path):
    assert run("metrics", tmp_path / "nope.svol", tmp_path / "nope.svol") == 4
