import subprocess
import sys

import numpy as np
import pytest

from cbgan_aug.cli import EXIT_CONFIG, EXIT_RUNTIME, main
from cbgan_aug.config import SCHEMA, ConfigError, ExperimentConfig, dump_defaults
from cbgan_aug.data import load_case, load_dataset
from cbgan_aug.tensorio import read_tensor

TINY = """\
seed = 0
phantom.num_cases = 10
phantom.height = 32
phantom.width = 32
phantom.tumor_probability = 1.0
split.train = 0.6
split.val = 0.2
split.test = 0.2
deform.alpha = 0   # identity deformation: synth must reproduce labels
deform.sigma = 4
gan.batch_size = 2
gan.iterations = 2
gan.width_divisor = 8
gan.checkpoint_every = 1
seg.epochs = 1
synth.count = 3
compare.seeds = 1
"""


def write_cfg(tmp_path, text=TINY, name="exp.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_config_rejects_unknown_key():
    with pytest.raises(ConfigError, match="unknown config keys: gan.lr"):
        ExperimentConfig.from_dict({"seed": "1", "gan.lr": "0.1"})


def test_config_requires_seed():
    with pytest.raises(ConfigError, match="seed"):
        ExperimentConfig.from_dict({})


@pytest.mark.parametrize(
    "raw",
    [
        {"seed": "0", "split.train": "0.9"},
        {"seed": "0", "aug.mode": "fancy"},
        {"seed": "0", "phantom.height": "48"},
        {"seed": "0", "loss.lambda1": "-1"},
        {"seed": "0", "gan.batch_size": "two"},
        {"seed": "0", "deform.sigma": "0"},
    ],
)
def test_config_invalid_values(raw):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(raw)


def test_config_file_parsing(tmp_path):
    cfg = ExperimentConfig.from_file(write_cfg(tmp_path))
    assert cfg["deform.alpha"] == 0.0 and cfg["gan.width_divisor"] == 8
    assert cfg["loss.lambda1"] == 10.0  # default kept
    assert cfg.gan_optimizer().iterations == 2
    with pytest.raises(ConfigError, match="duplicate"):
        ExperimentConfig.from_file(write_cfg(tmp_path, "seed=1\nseed=2\n"))
    with pytest.raises(ConfigError, match="key=value"):
        ExperimentConfig.from_file(write_cfg(tmp_path, "seed 1\n"))


def test_dump_defaults_roundtrip(tmp_path, capsys):
    assert main(["dump-defaults"]) == 0
    out = capsys.readouterr().out
    assert out == dump_defaults()
    assert [line.split("=")[0] for line in out.splitlines()] == list(SCHEMA)
    cfg = ExperimentConfig.from_file(write_cfg(tmp_path, out))
    assert cfg["gan.iterations"] == 2000 and cfg["deform.order"] == "raw_first"


def test_exit_codes(tmp_path, monkeypatch):
    monkeypatch.delenv("CBGAN_AUG_OUT", raising=False)
    cfg = write_cfg(tmp_path)
    assert main(["phantom", "--config", str(cfg)]) == EXIT_CONFIG  # no --out
    assert main(["phantom", "--out", str(tmp_path / "o")]) == EXIT_CONFIG  # no --config
    bad = write_cfg(tmp_path, "seed=0\nbogus=1\n", "bad.cfg")
    assert main(["phantom", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    # proposed mode without a GAN checkpoint is a configuration error
    out = tmp_path / "o2"
    assert main(["phantom", "--config", str(cfg), "--out", str(out)]) == 0
    assert main(["train-seg", "--config", str(cfg), "--out", str(out), "--mode", "proposed"]) == EXIT_CONFIG
    # unreadable dataset is a runtime failure
    (out / "dataset" / "phantom_0000" / "t1.tnsr").write_bytes(b"XXXX")
    assert main(["train-seg", "--config", str(cfg), "--out", str(out), "--mode", "none"]) == EXIT_RUNTIME


def test_env_out_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("CBGAN_AUG_OUT", str(tmp_path / "env"))
    assert main(["phantom", "--config", str(write_cfg(tmp_path))]) == 0
    assert len(load_dataset(tmp_path / "env" / "dataset")) == 10


def test_pipeline_end_to_end(tmp_path):
    cfg, out = str(write_cfg(tmp_path)), tmp_path / "run"
    base = ["--config", cfg, "--out", str(out)]
    assert main(["phantom", *base]) == 0
    assert main(["phantom", *base]) == EXIT_CONFIG  # refuses to overwrite
    assert main(["train-gan", *base]) == 0
    gan = out / "gan"
    assert (gan / "checkpoints" / "gan_final.ckpt").exists()
    assert (gan / "checkpoints" / "gan_000001.ckpt").exists()
    assert len((gan / "loss_log.csv").read_text().splitlines()) == 3

    assert main(["synth", *base]) == 0
    synth_dirs = sorted((out / "synth").iterdir())
    assert len(synth_dirs) == 3
    for d in synth_dirs:
        case = load_case(d)
        meta = dict(line.split("=", 1) for line in (d / "meta.txt").read_text().splitlines())
        source = load_case(out / "dataset" / meta["source"])
        assert np.array_equal(case.labels, source.labels)
        assert read_tensor(d / "boundary.tnsr").shape == (32, 32)
        assert read_tensor(d / "semantic.tnsr").max() <= 5

    assert main(["train-seg", *base, "--mode", "proposed"]) == 0
    seg = out / "seg_proposed"
    assert (seg / "unet.ckpt").exists()
    assert (seg / "metrics.csv").read_text().splitlines()[0] == "epoch,dice_complete,dice_core,dice_enh"

    assert main(["evaluate", *base, "--checkpoint", str(seg / "unet.ckpt")]) == 0
    report = (out / "eval" / "report.csv").read_text().splitlines()
    assert report[0].startswith("case_id,complete_dice") and report[-1].startswith("mean,")
    assert "Dice" in (out / "eval" / "table.txt").read_text()

    # evaluate refuses a GAN checkpoint
    assert main(["evaluate", *base, "--checkpoint", str(gan / "checkpoints" / "gan_final.ckpt")]) == EXIT_CONFIG

    assert main(["compare", *base, "--checkpoint", str(gan / "checkpoints" / "gan_final.ckpt")]) == 0
    rows = (out / "compare" / "per_seed.csv").read_text().splitlines()
    assert rows[0] == "mode,seed,dice_complete,dice_core,dice_enh"
    assert [r.split(",")[0] for r in rows[1:]] == ["none", "traditional", "proposed"]
    table = (out / "compare" / "table.txt").read_text()
    assert "w/o DA" in table and "w/ DA" in table and "w/ Proposed" in table


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "cbgan_aug", "dump-defaults"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("seed=0")
    proc = subprocess.run([sys.executable, "-m", "cbgan_aug", "phantom", "--config", str(tmp_path / "missing.cfg"),
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == EXIT_CONFIG and "config error" in proc.stderr
