import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from radreid.cli import main
from radreid.config import TrainConfig
from radreid.trainer import init_encoder, load_checkpoint

TINY = ["synth_identities=6", "synth_min_samples=4", "synth_max_samples=6", "synth_dim=8",
        "embed_dim=8", "hidden_dim=16", "batch_p=4", "batch_m=2", "K=1",
        "epochs_init=2", "epochs_cluster=2", "clusters_start=6", "clusters_end=4"]


def _sets(extra=()):
    out = []
    for pair in list(TINY) + list(extra):
        out += ["--set", pair]
    return out


@pytest.fixture
def data(tmp_path):
    d = tmp_path / "data"
    assert main(["synth", "--out", str(d)] + _sets()) == 0
    assert main(["gen-pt", "--data", str(d), "--out", str(d)] + _sets()) == 0
    return d


def test_full_pipeline(tmp_path, data, capsys):
    init, clus, ev = tmp_path / "init", tmp_path / "clus", tmp_path / "eval"
    assert main(["train-init", "--data", str(data), "--out", str(init)] + _sets()) == 0
    assert main(["train-cluster", "--data", str(data), "--out", str(clus),
                 "--checkpoint", str(init / "checkpoint")] + _sets()) == 0
    capsys.readouterr()
    assert main(["eval", "--data", str(data), "--out", str(ev), "--checkpoint", str(clus / "checkpoint")] + _sets()) == 0
    printed = json.loads(capsys.readouterr().out)
    report = json.loads((ev / "report.json").read_text())
    assert printed == report and 0.0 <= report["map"] <= 1.0
    assert (ev / "projection.csv").read_text().startswith("x,y,label\n")
    log = [json.loads(line) for line in (clus / "log.jsonl").read_text().splitlines()]
    assert [r["num_clusters"] for r in log] == [6, 4]
    assert "# command: train-cluster" in (clus / "manifest").read_text()
    assert main(["cluster-stats", "--data", str(data), "--out", str(ev),
                 "--checkpoint", str(clus / "checkpoint")] + _sets()) == 0
    stats = json.loads((ev / "cluster_stats.json").read_text())
    assert stats


def test_zero_epoch_checkpoint_equals_initialisation(tmp_path, data):
    out = tmp_path / "r"
    assert main(["train-init", "--data", str(data), "--out", str(out)] + _sets(["epochs_init=0", "seed=4"])) == 0
    params, echo = load_checkpoint(out / "checkpoint")
    assert echo["seed"] == 4 and echo["epochs_init"] == 0
    ref = init_encoder(8, TrainConfig(embed_dim=8, hidden_dim=16, seed=4))
    for a, b in zip(ref.tensors(), params.tensors()):
        np.testing.assert_array_equal(a.astype(np.float32), b)


def test_ablate_writes_one_row_per_value(tmp_path, data):
    out = tmp_path / "abl"
    code = main(["ablate", "--data", str(data), "--out", str(out)]
                + _sets(["ablate_param=gamma", "ablate_values=0.1,0.5,1.0"]))
    assert code == 0
    rows = list(csv.DictReader(open(out / "results.csv")))
    assert [r["gamma"] for r in rows] == ["0.1", "0.5", "1.0"]
    assert set(rows[0]) == {"run", "gamma", "rank1", "rank5", "rank10", "map"}


def test_figure_mode_with_flips(tmp_path):
    d = tmp_path / "fig"
    figs = ["synth_figures=true", "pt_mode=sia", "aug_flips=true", "synth_identities=3",
            "synth_min_samples=2", "synth_max_samples=2"]
    assert main(["synth", "--out", str(d)] + _sets(figs)) == 0
    assert main(["gen-pt", "--data", str(d), "--out", str(d)] + _sets(figs)) == 0
    assert any((d / "pt_images").iterdir())


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_exit_codes(tmp_path, data):
    out = str(tmp_path / "x")
    assert main(["train-init", "--data", str(data), "--out", out, "--set", "gamme=1"]) == 1
    assert main(["train-init", "--data", str(data), "--out", out, "--set", "lr=abc"]) == 1
    assert main(["train-init", "--out", out]) == 1
    assert main(["train-init", "--data", str(tmp_path / "missing"), "--out", out]) == 2
    assert main(["eval", "--data", str(data), "--out", out, "--checkpoint", str(tmp_path / "nope")]) == 2
    assert main(["ablate", "--data", str(data), "--out", out, "--set", "ablate_param=hidden_dim"]) == 1
    assert main(["train-init", "--data", str(data), "--out", out] + _sets(["lr=1e300", "epochs_init=3"])) == 3


def test_config_file_and_entry_point(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("[synth]\n" + "\n".join(p.replace("=", " = ") for p in TINY[:4]) + "\n")
    d = tmp_path / "d"
    proc = subprocess.run([sys.executable, "-m", "radreid.cli", "synth", "-c", str(cfg), "--out", str(d)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "synth_identities = 6" in (d / "manifest").read_text()
