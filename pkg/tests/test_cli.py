import json
import shutil
import subprocess
import sys
from importlib import resources

import pytest

from flowpdfa.cli import main
from flowpdfa.flows import load_flows

MINI = resources.files("flowpdfa") / "data" / "mini_config.yaml"


@pytest.fixture
def run(tmp_path):
    def _run(*args, out="out"):
        return main([args[0], str(MINI), "-s", f"output_dir={tmp_path / out}", *args[1:]])
    return _run


def test_train_mini_corpus(run, tmp_path, capsys):
    assert run("train") == 0
    man = json.loads((tmp_path / "out" / "manifest.json").read_text())
    # golden values for the bundled corpus under the bundled config
    assert man["pta_states"] == 255
    assert man["model_states"] == 3
    assert 1 < man["model_states"] < man["pta_states"]
    for name in ("model.json", "encoder.json", "train_scores.csv", "merges.tsv"):
        assert (tmp_path / "out" / name).exists()
    assert "3 states" in capsys.readouterr().out


def test_full_pipeline_and_rerun_identical(run, tmp_path):
    assert run("train") == 0
    assert run("score", "--svg") == 0
    assert run("eval") == 0
    out = tmp_path / "out"
    first = {p.name: p.read_bytes() for p in out.iterdir()}
    assert {"scores.csv", "report.json", "report.txt", "likelihood_test.svg"} <= set(first)
    assert run("train") == 0 and run("score", "--svg") == 0 and run("eval") == 0
    assert {p.name: p.read_bytes() for p in out.iterdir()} == first
    report = json.loads(first["report.json"])
    assert [r["method"] for r in report] == ["pdfa", "iforest"]


def test_malicious_in_train_window(run, capsys):
    assert run("train", "-s", "split_boundary=1650000300000") == 2
    assert "malicious" in capsys.readouterr().err


def test_fingerprint_mismatch(run, capsys):
    assert run("train") == 0
    assert run("score", "-s", "model.alpha=0.01") == 3
    assert "fingerprint" in capsys.readouterr().err


def test_score_output_dir_and_plots_not_fingerprinted(run, tmp_path):
    assert run("train") == 0
    shutil.copytree(tmp_path / "out", tmp_path / "moved")
    assert run("score", "-s", "plots.order=by_timestamp", out="moved") == 0


@pytest.mark.parametrize("argv", [[], ["frobnicate"], ["train"], ["train", "x.yaml", "-s", "novalue"]])
def test_usage_errors(argv):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 1


def test_unknown_config_key(run):
    assert run("train", "-s", "model.gamma=3") == 2


def test_missing_config_file(tmp_path):
    assert main(["train", str(tmp_path / "none.yaml")]) == 2


def test_score_before_train(run):
    assert run("score") == 2


def test_export_traces_and_dot(run, tmp_path):
    assert run("export-traces", str(tmp_path / "train.dat")) == 0
    header = (tmp_path / "train.dat").read_text().splitlines()[0]
    n_train = sum(1 for r in load_flows(MINI.parent / "mini_flows.csv") if r.timestamp_start < 1650000180000)
    assert int(header.split()[0]) == n_train - 5 + 1
    assert run("train") == 0
    assert main(["export-dot", str(tmp_path / "out" / "model.json"), str(tmp_path / "m.dot")]) == 0
    assert (tmp_path / "m.dot").read_text().startswith("digraph")


def test_sweep_structure(run, tmp_path):
    assert run("sweep", "-s", "encoder.clusters=3", "-s", "encoder.context_bins=3", "-s", "window=3") == 0
    rows = json.loads((tmp_path / "out" / "report.json").read_text())
    pdfa = [r for r in rows if r["method"] == "pdfa"]
    base = [r for r in rows if r["method"] == "iforest"]
    assert len(pdfa) == 12 and len(base) == 4
    assert {(r["encoding"], r["level"]) for r in pdfa} == {
        (e, l) for e in ("percentile", "frequency", "contextual_frequency")
        for l in ("connection", "source_host", "destination_host", "timestamp")}


def test_console_script(tmp_path):
    res = subprocess.run([sys.executable, "-m", "flowpdfa.cli", "train", str(MINI),
                          "-s", f"output_dir={tmp_path}"], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
