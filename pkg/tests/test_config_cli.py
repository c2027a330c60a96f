import json
import subprocess
import sys

import numpy as np
import pytest
from filelock import FileLock
from PIL import Image

from cdaae.cli import main
from cdaae.config import KEYS, ConfigError, emit_config, parse_config

TINY = """\
[train]
steps = 4
batch_size = 8
width = 0.125
checkpoint_every = 2  # keep one intermediate checkpoint
[adapt]
pretrain_steps = 3
epochs = 2
[data]
n_per_class = 4
n_test_per_class = 2
"""


# -- config ------------------------------------------------------------------------------


def test_empty_config_gives_defaults():
    cfg = parse_config("")
    w = cfg.weights
    assert (w.gamma1, w.gamma2, w.lambda1, w.lambda2, w.eta1, w.eta2) == (2.0, 0.15, 5.0, 0.5, 0.3, 0.3)
    assert (w.beta1, w.beta2) == (0.0, 0.0)
    assert (cfg.adapt.t_init, cfg.adapt.w) == (0.85, 10000)
    assert cfg.train.mode == "supervised"


def test_semi_supervised_turns_on_unsupervised_consistency():
    assert parse_config("mode = semi-supervised").weights.beta1 == 1.0
    assert parse_config("", command="adapt").weights.beta2 == 1.0
    assert parse_config("mode = semi-supervised\nbeta1 = 0.25").weights.beta1 == 0.25


@pytest.mark.parametrize(
    "text, pattern",
    [
        ("\n\ngamma1 = -1", r"line 3: key 'gamma1': value -1 out of range"),
        ("gama1 = 2", r"line 1: unknown key 'gama1'"),
        ("[model]", r"line 1: unknown section"),
        ("[train]\ngamma1 = 2", r"line 2: key 'gamma1' belongs in \[weights\]"),
        ("steps = 3\nsteps = 4", r"line 2: key 'steps' set twice"),
        ("steps = many", r"line 1: key 'steps': cannot read 'many' as int"),
        ("t_init = 1.5", r"key 't_init'.*in \[0, 1\]"),
        ("just words", r"expected 'key = value'"),
        ("lr = nan", r"key 'lr'"),
    ],
)
def test_config_errors(text, pattern):
    with pytest.raises(ConfigError, match=pattern):
        parse_config(text)


def test_config_round_trip():
    for text in ("", TINY, "mode = semi-supervised\nlr = 3e-4\nboosted = true\nkind = shapes"):
        cfg = parse_config(text)
        again = parse_config(emit_config(cfg))
        assert again.values == cfg.values
        assert emit_config(again) == emit_config(cfg)


def test_every_key_emitted_once():
    lines = [l for l in emit_config(parse_config("")).splitlines() if "=" in l]
    assert sorted(l.split(" = ")[0] for l in lines) == sorted(KEYS)


def test_overrides_are_validated():
    assert parse_config("seed = 1", overrides={"seed": 9})["seed"] == 9
    with pytest.raises(ConfigError, match="override"):
        parse_config("", overrides={"steps": 0})


def test_idx_dataset_needs_paths():
    with pytest.raises(ConfigError, match="train_a_images"):
        parse_config("dataset = idx").dataset()


# -- CLI -----------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.cfg"
    cfg.write_text(TINY)
    assert main(["train", "--config", str(cfg), "--out", str(root / "run"), "--seed", "3"]) == 0
    return root, cfg


def test_train_writes_reproducibility_bundle(trained):
    root, _ = trained
    run = root / "run"
    for name in ("config.resolved", "seed", "manifest.json", "metrics.csv", "final.ckpt", "checkpoints/step-0000002.ckpt"):
        assert (run / name).exists(), name
    assert (run / "seed").read_text() == "3\n"
    assert parse_config((run / "config.resolved").read_text())["seed"] == 3
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["command"] == "train"
    assert {"metrics.csv", "final.ckpt", "config.resolved", "seed"} <= set(manifest["files"])
    assert not (run / ".lock").exists()


def test_generate_grid(trained):
    root, cfg = trained
    out = root / "gen"
    assert main(["generate", "--config", str(cfg), "--out", str(out), "--checkpoint", str(root / "run" / "final.ckpt"), "--styles", "10"]) == 0
    png = np.asarray(Image.open(out / "prior-A.png"))
    assert png.shape == (320, 320, 3)
    assert np.load(out / "prior-A.npy").shape == (100, 3, 32, 32)


def test_transform_grid(trained):
    root, cfg = trained
    out = root / "tr"
    assert main(["transform", "--config", str(cfg), "--out", str(out), "--checkpoint", str(root / "run" / "final.ckpt"), "--inputs", "8", "--styles", "6"]) == 0
    png = np.asarray(Image.open(out / "transform-A2B.png"))
    assert png.shape == (8 * 32, 7 * 32 + 2, 3)
    assert (png[:, 32:34] == (255, 0, 0)).all()
    out2 = root / "st"
    assert main(["transform", "--config", str(cfg), "--out", str(out2), "--checkpoint", str(root / "run" / "final.ckpt"), "--inputs", "3", "--styles", "4", "--style-source", "images"]) == 0
    assert np.asarray(Image.open(out2 / "styles-A-B.png")).shape == (4 * 32 + 2, 5 * 32 + 2, 3)


def test_eval_and_grid_commands(trained):
    root, cfg = trained
    out = root / "ev"
    assert main(["eval", "--config", str(cfg), "--out", str(out), "--checkpoint", str(root / "run" / "final.ckpt"), "--n-per-class", "2", "--oracle-steps", "3"]) == 0
    assert (out / "eval.csv").read_text().startswith("scenario,accuracy,samples")
    out2 = root / "grid"
    assert main(["grid", "--out", str(out2), "--samples", str(root / "gen" / "prior-A.npy"), "--rows", "10"]) == 0
    assert np.asarray(Image.open(out2 / "prior-A-grid.png")).shape == (320, 320, 3)


def test_adapt_command(trained, capsys):
    root, cfg = trained
    out = root / "ad"
    assert main(["adapt", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "trace.csv").read_text().count("\n") == 3
    assert "source-only" in capsys.readouterr().out


def test_missing_checkpoint(tmp_path, capsys):
    assert main(["generate", "--out", str(tmp_path / "g")]) == 1
    err = capsys.readouterr().err
    assert err.count("\n") == 1 and "needs --checkpoint" in err
    assert main(["eval", "--out", str(tmp_path / "e"), "--checkpoint", str(tmp_path / "nope.ckpt")]) == 1
    assert "not found" in capsys.readouterr().err


def test_bad_config_exits_nonzero(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("gamma1 = -1\n")
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert err.count("\n") == 1 and "gamma1" in err and "line 1" in err


def test_lock_conflict(tmp_path, capsys):
    out = tmp_path / "busy"
    out.mkdir()
    with FileLock(str(out / ".lock")):
        assert main(["train", "--out", str(out), "--steps", "1"]) == 1
    assert "in use" in capsys.readouterr().err


def test_unknown_command_and_help():
    bad = subprocess.run([sys.executable, "-m", "cdaae.cli", "fly"], capture_output=True, text=True)
    assert bad.returncode == 2 and "usage:" in bad.stderr
    ok = subprocess.run([sys.executable, "-m", "cdaae.cli", "--help"], capture_output=True, text=True)
    assert ok.returncode == 0 and "CDAAE_DATA_ROOT" in ok.stdout
    sub = subprocess.run([sys.executable, "-m", "cdaae.cli", "train", "--help"], capture_output=True, text=True)
    for flag in ("--config", "--out", "--seed", "--checkpoint", "--steps"):
        assert flag in sub.stdout
