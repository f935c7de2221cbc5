import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from oracles import agreement, kmeans2
from srmtl.dataio import (
    SynthConfig,
    Trial,
    TrialSet,
    load_dataset,
    load_trial,
    planted_subclasses,
    save_dataset,
    save_trial,
    synth_dataset,
)
from srmtl.errors import (
    InvalidConfig,
    MissingFile,
    NonFiniteSample,
    SchemaViolation,
    ShapeMismatch,
)


def write_manifest(tmp_path, body):
    p = tmp_path / "manifest.json"
    p.write_text(json.dumps(body))
    return p


def base_manifest(trials, fs=250.0, channels=("C3", "Cz", "C4"), window=None):
    body = {"name": "t", "fs_hz": fs, "channels": list(channels), "trials": trials}
    if window is not None:
        body["window"] = window
    return body


def test_empty_manifest_rejected(tmp_path):
    p = write_manifest(tmp_path, base_manifest([]))
    with pytest.raises(SchemaViolation):
        load_dataset(p)


def test_single_trial_manifest(tmp_path):
    x = np.arange(3000, dtype="<f4").reshape(3, 1000)
    x.tofile(tmp_path / "a.f32")
    p = write_manifest(tmp_path, base_manifest(
        [{"file": "a.f32", "label": 1}], window={"offset_s": 0.0, "length_s": 4.0}))
    ts = load_dataset(p)
    assert (len(ts), ts.n_channels, ts.n_samples) == (1, 3, 1000)
    assert ts[0].label == 1
    np.testing.assert_array_equal(ts[0].data, x)


def test_save_load_trial_bit_identical(tmp_path, rng):
    x = rng.standard_normal((5, 321)).astype(np.float32)
    t = Trial(x, 2, 100.0)
    save_trial(t, tmp_path / "t.f32")
    back = load_trial(tmp_path / "t.f32", 5)
    assert back.dtype == np.dtype("<f4")
    assert back.tobytes() == x.tobytes()


def test_file_layout_is_raw_little_endian_row_major(tmp_path):
    x = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)
    save_trial(Trial(x, 1, 10.0), tmp_path / "t.f32")
    raw = (tmp_path / "t.f32").read_bytes()
    assert raw == np.array([1, 2, 3, 4], dtype="<f4").tobytes()


def test_default_window_applied(tmp_path, rng):
    fs = 100.0
    x = rng.standard_normal((2, 500)).astype("<f4")
    x.tofile(tmp_path / "a.f32")
    p = write_manifest(tmp_path, base_manifest(
        [{"file": "a.f32", "label": 2, "onset_s": 0.5}], fs=fs, channels=("a", "b")))
    ts = load_dataset(p)
    # default window is 0.5 .. 3.5 s after the cue
    start = int(round((0.5 + 0.5) * fs))
    np.testing.assert_array_equal(ts[0].data, x[:, start:start + 300])


def test_window_outside_file(tmp_path):
    np.zeros((3, 100), dtype="<f4").tofile(tmp_path / "a.f32")
    p = write_manifest(tmp_path, base_manifest([{"file": "a.f32", "label": 1}]))
    with pytest.raises(ShapeMismatch):
        load_dataset(p)


def test_missing_manifest_and_trial(tmp_path):
    with pytest.raises(MissingFile):
        load_dataset(tmp_path / "nope.json")
    p = write_manifest(tmp_path, base_manifest([{"file": "gone.f32", "label": 1}]))
    with pytest.raises(MissingFile):
        load_dataset(p)


@pytest.mark.parametrize("body", [
    {"name": "t", "fs_hz": 250, "channels": ["a"]},
    {"name": "t", "fs_hz": -1, "channels": ["a"], "trials": [{"file": "a", "label": 1}]},
    {"name": "t", "fs_hz": 250, "channels": [], "trials": [{"file": "a", "label": 1}]},
    {"name": "t", "fs_hz": 250, "channels": ["a"], "trials": [{"file": "a", "label": 3}]},
])
def test_schema_violations(tmp_path, body):
    with pytest.raises(SchemaViolation):
        load_dataset(write_manifest(tmp_path, body))


def test_invalid_json(tmp_path):
    p = tmp_path / "m.json"
    p.write_text("{not json")
    with pytest.raises(SchemaViolation):
        load_dataset(p)


def test_shape_mismatch_between_trials(tmp_path):
    np.zeros((3, 1000), dtype="<f4").tofile(tmp_path / "a.f32")
    np.zeros((3, 900), dtype="<f4").tofile(tmp_path / "b.f32")
    p = write_manifest(tmp_path, base_manifest(
        [{"file": "a.f32", "label": 1}, {"file": "b.f32", "label": 2}],
        window={"offset_s": 0.0, "length_s": 3.8}))
    # b is shorter than the window
    with pytest.raises(ShapeMismatch):
        load_dataset(p)
    with pytest.raises(ShapeMismatch):
        TrialSet((Trial(np.zeros((3, 10)), 1, 1.0), Trial(np.zeros((3, 11)), 2, 1.0)))


def test_non_finite_sample(tmp_path):
    x = np.zeros((3, 1000), dtype="<f4")
    x[1, 7] = np.nan
    x.tofile(tmp_path / "a.f32")
    p = write_manifest(tmp_path, base_manifest(
        [{"file": "a.f32", "label": 1}], window={"offset_s": 0.0, "length_s": 4.0}))
    with pytest.raises(NonFiniteSample):
        load_dataset(p)
    with pytest.raises(NonFiniteSample):
        Trial(np.array([[0.0, np.inf]]), 1, 1.0)


def test_trial_invariants():
    with pytest.raises(ShapeMismatch):
        Trial(np.zeros((2, 1)), 1, 10.0)
    with pytest.raises(InvalidConfig):
        Trial(np.zeros((2, 3)), 1, 0.0)
    with pytest.raises(InvalidConfig):
        Trial(np.zeros((2, 3)), 3, 10.0)
    t = Trial(np.zeros((2, 3)), 1, 10.0)
    with pytest.raises(ValueError):
        t.data[0, 0] = 1.0


@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=3, max_dims=3, min_side=2, max_side=6),
                  elements=st.floats(-1e6, 1e6, width=32)))
def test_dataset_round_trip_property(tmp_path_factory, X):
    d = tmp_path_factory.mktemp("rt")
    labels = [1 + (i % 2) for i in range(X.shape[0])]
    ts = TrialSet.from_arrays(X, labels, 128.0)
    load = load_dataset(save_dataset(ts, d))
    assert load.data.tobytes() == ts.data.tobytes()
    assert list(load.labels) == labels
    assert load.channel_names == ts.channel_names


def test_synth_determinism():
    a = synth_dataset(SynthConfig(seed=7))
    b = synth_dataset(SynthConfig(seed=7))
    assert a.data.tobytes() == b.data.tobytes()
    assert list(a.labels) == list(b.labels)
    c = synth_dataset(SynthConfig(seed=8))
    assert a.data.tobytes() != c.data.tobytes()


def test_synth_shape_and_labels():
    cfg = SynthConfig(n_per_class=12, channels=5, samples=200, subclasses_per_class=3,
                      band_centers=(8.0, 12.0, 20.0), seed=1)
    ts = synth_dataset(cfg)
    assert len(ts) == 24 and ts.n_channels == 5 and ts.n_samples == 200
    assert list(ts.labels) == [1] * 12 + [2] * 12
    sub = planted_subclasses(cfg)
    assert np.bincount(sub[:12]).tolist() == [4, 4, 4]


def test_high_snr_spectrum_peaks_at_band_center():
    cfg = SynthConfig(n_per_class=20, subclasses_per_class=1, band_centers=(13.0,),
                      snr_db=60.0, seed=3)
    ts = synth_dataset(cfg)
    freqs = np.fft.rfftfreq(cfg.samples, 1.0 / cfg.fs)
    bin_width = freqs[1]
    for c in (1, 2):
        X = ts.data[ts.labels == c].astype(np.float64)
        spec = np.mean(np.abs(np.fft.rfft(X, axis=-1)) ** 2, axis=(0, 1))
        assert abs(freqs[np.argmax(spec)] - 13.0) <= bin_width


def test_band_power_kmeans_recovers_generators():
    for seed in range(3):
        cfg = SynthConfig(n_per_class=40, snr_db=20.0, seed=seed)
        ts = synth_dataset(cfg)
        freqs = np.fft.rfftfreq(cfg.samples, 1.0 / cfg.fs)
        sub = planted_subclasses(cfg)
        for c in (1, 2):
            X = ts.data[ts.labels == c].astype(np.float64)
            P = np.abs(np.fft.rfft(X, axis=-1)) ** 2
            feats = np.stack([
                np.log(P[..., (freqs >= f - 2) & (freqs <= f + 2)].sum(axis=(1, 2)))
                for f in cfg.band_centers], axis=1)
            assert agreement(kmeans2(feats), sub[ts.labels == c]) >= 0.9


def test_synth_config_validation():
    with pytest.raises(InvalidConfig):
        SynthConfig(n_per_class=1, subclasses_per_class=2)
    with pytest.raises(InvalidConfig):
        SynthConfig(snr_db=float("nan"))
    with pytest.raises(InvalidConfig):
        SynthConfig(band_centers=(10.0,))
    with pytest.raises(InvalidConfig):
        SynthConfig.from_dict({"bogus": 1})
