"""End-to-end command-line behavior and exit codes."""

import numpy as np
import pytest

from flowmaplab.cli import main
from flowmaplab.data import load_pgm

TINY_CFG = """\
[train]
task = gaussian2d
fm_steps = 4
fmsd_steps = 4
cfg_steps = 4
adv_steps = 3
d_pretrain_steps = 2
batch_size = 8
hidden = 16
depth = 2
time_dim = 8
cond_dim = 4
"""


@pytest.fixture
def trained(tmp_path):
    cfg = tmp_path / "cfg.ini"
    cfg.write_text(TINY_CFG)
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--out", str(out), "--seed", "0"]) == 0
    return out


def test_train_writes_artifacts(trained):
    assert (trained / "metrics.csv").exists()
    assert (trained / "model.ckpt").exists()
    header = (trained / "metrics.csv").read_text().splitlines()[0]
    assert header == "step,phase,loss_main,loss_perc,loss_weighted,lambda_mean,g_loss,d_loss"


def test_train_seed_reproducibility(tmp_path):
    cfg = tmp_path / "cfg.ini"
    cfg.write_text(TINY_CFG)
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["train", "--config", str(cfg), "--out", str(out),
                     "--seed", "7"]) == 0
        outs.append(out)
    assert (outs[0] / "metrics.csv").read_bytes() == (outs[1] / "metrics.csv").read_bytes()
    assert (outs[0] / "model.ckpt").read_bytes() == (outs[1] / "model.ckpt").read_bytes()


def test_sample_subcommand(trained, tmp_path):
    out = tmp_path / "samples"
    rc = main(["sample", "--checkpoint", str(trained / "model.ckpt"),
               "--out", str(out), "--n", "5", "--steps", "2", "--seed", "1"])
    assert rc == 0
    rows = (out / "samples.csv").read_text().splitlines()
    assert rows[0] == "x0,x1"
    assert len(rows) == 6


def test_eval_subcommand(trained, capsys):
    rc = main(["eval", "--checkpoint", str(trained / "model.ckpt"),
               "--n", "50", "--steps", "2"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "w2=" in out


def test_oracle_check_subcommand(tmp_path, capsys):
    rc = main(["oracle-check", "--setting", "ssd", "--probes", "3",
               "--out", str(tmp_path / "rep")])
    assert rc == 0
    assert "ssd: max residual" in capsys.readouterr().out
    assert (tmp_path / "rep" / "identity_ssd.csv").exists()


def test_gen_data_subcommand(tmp_path):
    out = tmp_path / "corpus"
    rc = main(["gen-data", "--out", str(out), "--n", "2", "--size", "8",
               "--seed", "3"])
    assert rc == 0
    img = load_pgm(out / "hr_00000.pgm")
    assert img.shape == (8, 8)
    assert (out / "manifest.csv").exists()


def test_sr_sample_writes_pgm(tmp_path):
    cfg = tmp_path / "cfg.ini"
    cfg.write_text(TINY_CFG.replace("task = gaussian2d",
                                    "task = texture_sr\nsize = 8"))
    run = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--out", str(run),
                 "--seed", "0"]) == 0
    out = tmp_path / "samples"
    rc = main(["sample", "--checkpoint", str(run / "model.ckpt"),
               "--out", str(out), "--n", "2", "--steps", "2"])
    assert rc == 0
    assert load_pgm(out / "sample_0000.pgm").shape == (8, 8)
    assert load_pgm(out / "input_0000.pgm").shape == (8, 8)


class TestExitCodes:
    def test_usage_error_is_one(self):
        assert main(["bogus"]) == 1

    def test_missing_required_flag_is_one(self):
        assert main(["train", "--out", "/tmp/x"]) == 1

    def test_missing_config_file_is_one(self, tmp_path):
        rc = main(["train", "--config", str(tmp_path / "nope.ini"),
                   "--out", str(tmp_path / "o")])
        assert rc == 1

    def test_unknown_config_key_is_one(self, tmp_path):
        cfg = tmp_path / "bad.ini"
        cfg.write_text("[train]\nwarp_factor = 9\n")
        rc = main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert rc == 1

    def test_numeric_failure_is_two(self, tmp_path, monkeypatch):
        # force a non-finite loss immediately via an absurd learning rate
        cfg = tmp_path / "cfg.ini"
        cfg.write_text(TINY_CFG.replace("fm_steps = 4", "fm_steps = 50")
                       + "lr_model = 1e200\n")
        with np.errstate(all="ignore"):
            rc = main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert rc == 2
