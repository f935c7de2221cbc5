import dataclasses
import math

import numpy as np
import pytest

from srmtl.dataio import SynthConfig, synth_dataset
from srmtl.errors import InvalidConfig, ZeroVariance
from srmtl.pipeline import (
    METHODS,
    PipelineConfig,
    PreparedData,
    evaluate_split,
    fold_plan,
    prepare,
    provenance,
    r_square,
    run_crossval,
    run_method_comparison,
    subject_table,
)
from srmtl.signal import BandSpec

SMALL = dict(
    bands=BandSpec.sweep(6.0, 26.0, 4.0, 4.0),
    lambda1_grid=(0.1, 1.0, 10.0),
    lambda2_grid=(0.1, 1.0),
    outer_folds=3,
    inner_folds=3,
    repeats=1,
)


def small_cfg(**kw):
    return PipelineConfig(**{**SMALL, **kw})


@pytest.fixture(scope="module")
def small_data():
    ts = synth_dataset(SynthConfig(n_per_class=24, channels=6, samples=300, snr_db=15.0, seed=4))
    return ts, prepare(ts, small_cfg())


def test_config_defaults():
    cfg = PipelineConfig()
    assert cfg.lambda1_grid[0] == 0.01 and cfg.lambda1_grid[-1] == 60.0
    assert len(cfg.lambda1_grid) == 17 and len(cfg.bands.bands()) == 17
    assert (cfg.outer_folds, cfg.repeats, cfg.inner_folds, cfg.svm_C, cfg.M) == (5, 5, 5, 1.0, 2)
    assert cfg.single_band == (4.0, 40.0)


def test_config_validation():
    for bad in ({"lambda1_grid": ()}, {"outer_folds": 1}, {"repeats": 0},
                {"method": "lda"}, {"lambda2_grid": (-1.0,)}, {"svm_C": 0.0}):
        with pytest.raises(InvalidConfig):
            PipelineConfig(**bad)
    with pytest.raises(InvalidConfig):
        PipelineConfig.from_dict({"cv": {"folds": 3}})
    with pytest.raises(InvalidConfig):
        PipelineConfig.from_dict({"bogus": 1})


def test_config_round_trip_and_hash(tmp_path):
    cfg = small_cfg(seed=3, synth=SynthConfig(seed=2))
    again = PipelineConfig.from_dict(cfg.to_dict())
    assert again == cfg
    assert again.config_hash() == cfg.config_hash()
    assert len(cfg.config_hash()) == 16
    assert dataclasses.replace(cfg, seed=4).config_hash() != cfg.config_hash()
    toml = tmp_path / "c.toml"
    toml.write_text('seed = 9\nmanifest = "data/m.json"\n[cv]\nrepeats = 2\n'
                    '[mtl]\nlambda1_grid = [5, 1, 1]\n')
    c = PipelineConfig.from_toml(toml)
    assert c.seed == 9 and c.repeats == 2 and c.lambda1_grid == (1.0, 5.0)
    assert c.manifest == str((tmp_path / "data/m.json").resolve())


def test_provenance_fields():
    p = provenance(small_cfg(), seed=5)
    for key in ("config_hash", "seed", "versions", "blas_threads", "workers"):
        assert key in p
    assert p["seed"] == 5
    assert "numpy" in p["versions"] and "srmtl" in p["versions"]


def test_fold_plan_is_stratified_and_shared(small_data):
    ts, _ = small_data
    cfg = small_cfg(repeats=2)
    plan = fold_plan(ts.labels, cfg)
    assert len(plan) == 6
    for r in range(2):
        tests = np.concatenate([te for rr, _, _, te in plan if rr == r])
        assert sorted(tests.tolist()) == list(range(len(ts)))
    for _, _, tr, te in plan:
        assert set(tr).isdisjoint(te)
        assert abs(np.mean(ts.labels[te] == 1) - 0.5) <= 1 / len(te) + 1e-12
    again = fold_plan(ts.labels, cfg)
    assert all(np.array_equal(a[3], b[3]) for a, b in zip(plan, again))


def test_comparison_is_paired_and_deterministic(small_data):
    _, data = small_data
    cfg = small_cfg()
    a = run_method_comparison(data, cfg, workers=1)
    b = run_method_comparison(data, cfg, workers=1)
    assert a.methods == METHODS
    for m in METHODS:
        assert a[m].folds == b[m].folds
        assert a[m].to_csv() == b[m].to_csv()
        assert [(f.repeat, f.fold, f.n_test) for f in a[m].folds] == \
               [(f.repeat, f.fold, f.n_test) for f in a["srmtl"].folds]
        acc = a[m].accuracies
        assert acc.shape == (1, 3) and np.all((0 <= acc) & (acc <= 1))
    assert a.table() == b.table()
    assert a["srmtl"].mean > 0.5
    assert all(f.n_subclasses >= 2 for f in a["srmtl"].folds)
    assert all(f.lambda2 is None for f in a["csp-only"].folds)


def test_zero_lambda2_reproduces_mtl(small_data):
    _, data = small_data
    cfg = small_cfg(lambda2_grid=(0.0,))
    s = run_crossval(data, cfg, method="srmtl", workers=1)
    m = run_crossval(data, cfg, method="mtl", workers=1)
    for a, b in zip(s.folds, m.folds):
        assert a.accuracy == b.accuracy and a.selected == b.selected and a.lambda1 == b.lambda1


def test_leakage_canary(small_data):
    _, data = small_data
    cfg = small_cfg()
    r, f, tr, te = fold_plan(data.labels, cfg)[0]
    scrambled = data.labels.copy()
    scrambled[te] = 3 - scrambled[te]
    poisoned = dataclasses.replace(data, labels=scrambled)
    for method in METHODS:
        p1, i1 = evaluate_split(data, tr, te, data.labels[tr], method, cfg, inner_seed=11)
        p2, i2 = evaluate_split(poisoned, tr, te, poisoned.labels[tr], method, cfg, inner_seed=11)
        assert np.array_equal(p1, p2)
        assert i1["selected"] == i2["selected"] and i1["lambda1"] == i2["lambda1"]


def test_null_labels_csp_only():
    ts = synth_dataset(SynthConfig(n_per_class=100, channels=6, samples=250, seed=5))
    rng = np.random.default_rng(0)
    null = ts.with_labels(rng.permutation(ts.labels))
    rep = run_crossval(null, PipelineConfig(method="csp-only", repeats=2), workers=1)
    assert 0.40 <= rep.mean <= 0.60


def test_report_files(small_data, tmp_path):
    _, data = small_data
    rep = run_crossval(data, small_cfg(), method="sfbcsp", workers=1)
    paths = rep.write(tmp_path)
    assert [p.name for p in paths] == ["sfbcsp_folds.csv", "sfbcsp_summary.json",
                                       "sfbcsp_timing.json"]
    text = paths[0].read_text().splitlines()
    assert text[0].startswith("# provenance ") and text[1].startswith("repeat,fold,method")
    assert len(text) == 2 + 3
    assert "config_hash" in paths[1].read_text()


def test_r_square():
    y = np.array([1.0, -1.0] * 10)
    assert r_square(y, y) == pytest.approx(1.0)
    with pytest.raises(ZeroVariance):
        r_square(np.ones(20), y)
    with pytest.raises(InvalidConfig):
        r_square(np.arange(4.0), np.ones(4))


def test_r_square_point_biserial_limit():
    rng = np.random.default_rng(1)
    delta = 0.7
    n = 400_000
    y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    x = delta * y + rng.standard_normal(n)
    # corr(x, y)^2 for equal classes with means +-delta and unit noise
    expect = delta ** 2 / (delta ** 2 + 1.0)
    assert abs(r_square(x, y) - expect) < 5e-3
    # exact point-biserial formula on the sample
    m1, m0 = x[y > 0].mean(), x[y < 0].mean()
    p = np.mean(y > 0)
    r = (m1 - m0) / x.std() * math.sqrt(p * (1 - p))
    assert abs(r_square(x, y) - r * r) < 1e-6


def test_subject_table_layout(small_data):
    _, data = small_data
    cfg = small_cfg()
    rep = run_method_comparison(data, cfg, workers=1)
    text = subject_table({"s1": rep, "s2": rep})
    lines = text.strip().split("\n")
    assert lines[0] == "Subject\tCSP\tSFBCSP\tMTL\tsrMTL"
    assert lines[1].startswith("s1\t") and lines[-1].startswith("Average\t")
    assert "*" in lines[1]
    assert all("+-" in cell for cell in lines[-1].split("\t")[1:])
    with pytest.raises(InvalidConfig):
        subject_table({})


def test_worker_count_does_not_change_folds(small_data):
    _, data = small_data
    cfg = small_cfg()
    one = run_crossval(data, cfg, method="srmtl", workers=1)
    two = run_crossval(data, cfg, method="srmtl", workers=2)
    assert one.folds == two.folds
