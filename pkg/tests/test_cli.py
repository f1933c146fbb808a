import json
import subprocess
import sys

import pytest

from objvlp import cli, synthworld
from objvlp.harness import RunConfig

TINY = {"seed": 2, "n_scenes": 8, "objects_per_scene": 4, "jitter_per_object": 3, "clutter_per_scene": 3,
        "noise_scale": 0.05}


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "cfg.json"
    RunConfig(dataset=dict(TINY), epochs=2, qa_epochs=1, hidden=[8], embed_dim=4).save(p)
    return p


def test_gen(tmp_path, capsys):
    out = tmp_path / "d.jsonl"
    assert cli.main(["gen", "--seed", "4", "--scenes", "5", "--out", str(out)]) == 0
    ds = synthworld.read_dataset(out)
    assert ds.header["seed"] == 4 and ds.header["params"]["n_scenes"] == 5
    assert "coverage@0.25" in capsys.readouterr().out


def test_train_then_eval(tmp_path, cfg_path):
    data = tmp_path / "d.jsonl"
    cli.main(["gen", "--seed", "2", "--scenes", "8", "--objects", "4", "--jitters", "3", "--clutter", "3",
              "--out", str(data)])
    run = tmp_path / "run"
    assert cli.main(["train", "--config", str(cfg_path), "--data", str(data), "--out", str(run)]) == 0
    assert (run / "checkpoint.json").exists() and (run / "train_log.json").exists()
    rep = tmp_path / "rep.json"
    assert cli.main(["eval", "--ckpt", str(run / "checkpoint.json"), "--data", str(data), "--report", str(rep),
                     "--config", str(cfg_path)]) == 0
    log = json.loads((run / "train_log.json").read_text())
    assert json.loads(rep.read_text()) == log["metrics"]


def test_eval_refuses_mismatched_config(tmp_path, cfg_path, capsys):
    run = tmp_path / "run"
    cli.main(["train", "--config", str(cfg_path), "--out", str(run)])
    other = tmp_path / "other.json"
    cfg = RunConfig.load(cfg_path)
    cfg.lr = 0.001
    cfg.save(other)
    code = cli.main(["eval", "--ckpt", str(run / "checkpoint.json"), "--config", str(other)])
    assert code != 0
    assert "hash" in capsys.readouterr().err


def test_missing_file_is_nonzero(tmp_path):
    assert cli.main(["eval", "--ckpt", str(tmp_path / "nope.json")]) != 0


def test_gradcheck_exit_codes(capsys):
    assert cli.main(["gradcheck"]) == 0
    assert "PASSED" in capsys.readouterr().out
    assert cli.main(["gradcheck", "--corrupt"]) == 1


def test_ablate_and_sweep(tmp_path, cfg_path):
    out = tmp_path / "abl"
    assert cli.main(["ablate", "--config", str(cfg_path), "--seeds", "0", "--out", str(out)]) == 0
    table = json.loads((out / "ablation.json").read_text())
    assert list(table) == ["none", "oid", "occ", "osc", "all"]
    out = tmp_path / "sweep"
    assert cli.main(["sweep-delta", "--config", str(cfg_path), "--seeds", "0", "--deltas", "0.25,0.75",
                     "--out", str(out)]) == 0
    sweep = json.loads((out / "sweep.json").read_text())
    assert [p["delta"] for p in sweep["curves"]["full"]] == [0.25, 0.75]
    assert (out / "oid_only_acc_at_0.25.csv").exists()


def test_seed_parsing():
    assert cli._seeds("0-2,5") == [0, 1, 2, 5]


def test_entry_point_runs():
    out = subprocess.run([sys.executable, "-m", "objvlp.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "sweep-delta" in out.stdout
