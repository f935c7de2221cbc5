import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from srmtl.cli import main
from srmtl.dataio import TrialSet, save_dataset

SMALL_TOML = """
seed = 1
methods = ["csp-only", "sfbcsp", "mtl", "srmtl"]
[synth]
n_per_class = 20
channels = 6
samples = 300
snr_db = 15.0
seed = 3
[bands]
lo = 6.0
hi = 26.0
width = 4.0
step = 4.0
[mtl]
lambda1_grid = [0.1, 1.0, 10.0]
lambda2_grid = [0.1, 1.0]
[cv]
outer_folds = 3
repeats = 1
inner_folds = 3
"""


def provenance_of(path):
    first = path.read_text().splitlines()[0]
    assert first.startswith("# provenance ")
    return json.loads(first[len("# provenance "):])


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "small.toml").write_text(SMALL_TOML)
    assert main(["synth", "--config", str(d / "small.toml"), "--out", str(d / "data")]) == 0
    return d


def test_help_exits_zero(capsys):
    assert main(["crossval", "--help"]) == 0
    assert "--config" in capsys.readouterr().out


def test_unknown_flag_named(capsys):
    assert main(["crossval", "--bogus"]) == 1
    assert "--bogus" in capsys.readouterr().err


def test_missing_file_is_validation_error(tmp_path, capsys):
    assert main(["features", "--train", str(tmp_path / "none.json"), "--out", str(tmp_path / "f.csv")]) == 1


def test_numerical_failure_exits_two(tmp_path, capsys):
    ts = TrialSet.from_arrays(np.zeros((4, 4, 200), dtype=np.float32), [1, 2, 1, 2], 250.0)
    save_dataset(ts, tmp_path / "flat")
    rc = main(["features", "--train", str(tmp_path / "flat"), "--out", str(tmp_path / "f.csv")])
    assert rc == 2
    assert "numerical failure" in capsys.readouterr().err


def test_console_script_entry():
    out = subprocess.run([sys.executable, "-m", "srmtl", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "crossval" in out.stdout


def test_stage_commands(workdir):
    d = workdir
    manifest = json.loads((d / "data" / "manifest.json").read_text())
    assert "config_hash" in manifest["provenance"]

    assert main(["filter", "--data", str(d / "data"), "--bands", "8:16:4:4", "--out", str(d / "bands")]) == 0
    bank = json.loads((d / "bands" / "filter_bank.json").read_text())
    assert len(bank["bands"]) == 2 and "provenance" in bank

    assert main(["features", "--train", str(d / "data"), "--bands", "6:26:4:4", "--out",
                 str(d / "f.csv"), "--filters-out", str(d / "u.json")]) == 0
    header = [ln for ln in (d / "f.csv").read_text().splitlines() if not ln.startswith("#")][0]
    assert header.split(",")[:2] == ["label", "6-10Hz_f0"] and len(header.split(",")) == 1 + 20
    assert provenance_of(d / "f.csv")["arguments"]["m"] == 2

    assert main(["cluster", "--features", str(d / "f.csv"), "--out", str(d / "p.csv")]) == 0
    assert "ap_status" in provenance_of(d / "p.csv")

    assert main(["train", "--features", str(d / "f.csv"), "--partition", str(d / "p.csv"),
                 "--lambda1", "1", "--lambda2", "0.5", "--out", str(d / "model")]) == 0
    rows = list(csv.reader(ln for ln in (d / "model" / "trace.csv").read_text().splitlines()
                           if not ln.startswith("#")))
    assert rows[0] == ["iteration", "objective", "normalized_error", "mu"]
    model = json.loads((d / "model" / "model.json").read_text())
    assert {"indices", "weights", "bias", "C", "means", "scales", "provenance"} <= set(model)
    provenance_of(d / "model" / "weights.csv")

    assert main(["rsq", "--features", str(d / "f.csv"), "--out", str(d / "r.csv")]) == 0
    vals = [float(r[1]) for r in csv.reader((d / "r.csv").read_text().splitlines()[2:])]
    assert len(vals) == 20 and all(0 <= v <= 1 for v in vals)


def test_crossval_and_compare_outputs(workdir, capsys):
    d = workdir
    assert main(["crossval", "--config", str(d / "small.toml"), "--data", str(d / "data"),
                 "--method", "mtl", "--out", str(d / "cv")]) == 0
    for name in ("mtl_folds.csv",):
        assert provenance_of(d / "cv" / name)["seed"] == 1
    for name in ("mtl_summary.json", "mtl_timing.json"):
        assert "config_hash" in json.loads((d / "cv" / name).read_text())["provenance"]
    capsys.readouterr()
    assert main(["compare", "--config", str(d / "small.toml"), "--out", str(d / "cmp")]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert out[0].startswith("# provenance") and len(out) == 2 + 4


@pytest.mark.slow
def test_compare_bundled_fixture(tmp_path, capsys):
    assert main(["compare", "--config", "fixture.toml", "--out", str(tmp_path)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    rows = list(csv.reader(lines[1:]))
    assert rows[0] == ["method", "mean_accuracy", "std_accuracy", "n_folds"]
    assert [r[0] for r in rows[1:]] == ["csp-only", "sfbcsp", "mtl", "srmtl"]
    assert (tmp_path / "comparison.json").is_file()
