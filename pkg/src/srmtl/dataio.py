"""EEG trial containers, manifest loading and the planted-subclass generator.

Trial files are raw little-endian float32, row-major ``C x P``, no header.
A JSON manifest lists them together with labels and the epoch window.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import jsonschema
import numpy as np

from .errors import (
    InvalidConfig,
    MissingFile,
    NonFiniteSample,
    SchemaViolation,
    ShapeMismatch,
)

__all__ = [
    "Trial",
    "TrialSet",
    "SynthConfig",
    "MANIFEST_SCHEMA",
    "DEFAULT_WINDOW",
    "load_dataset",
    "save_trial",
    "load_trial",
    "save_dataset",
    "synth_dataset",
    "planted_subclasses",
]

LABELS = (1, 2)
DEFAULT_WINDOW = {"offset_s": 0.5, "length_s": 3.0}
TRIAL_DTYPE = np.dtype("<f4")

MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["name", "fs_hz", "channels", "trials"],
    "properties": {
        "name": {"type": "string"},
        "fs_hz": {"type": "number", "exclusiveMinimum": 0},
        "channels": {
            "type": "array",
            "items": {"type": "string"},
            "minItems": 1,
        },
        "window": {
            "type": "object",
            "required": ["offset_s", "length_s"],
            "properties": {
                "offset_s": {"type": "number"},
                "length_s": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "trials": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["file", "label"],
                "properties": {
                    "file": {"type": "string", "minLength": 1},
                    "label": {"enum": list(LABELS)},
                    "onset_s": {"type": "number", "minimum": 0},
                },
            },
        },
    },
}


@dataclass(frozen=True)
class Trial:
    """One EEG epoch.

    ``data`` is stored as a read-only copy. ``label`` may be ``None`` for
    unlabelled (test-mode) trials.
    """

    data: np.ndarray
    label: int | None
    fs: float

    def __post_init__(self):
        data = np.array(self.data, copy=True)
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float64)
        if data.ndim != 2:
            raise ShapeMismatch(f"trial must be 2-D (C x P), got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 2:
            raise ShapeMismatch(f"trial needs C >= 1 and P >= 2, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise NonFiniteSample("trial contains non-finite samples")
        if not (self.fs > 0 and math.isfinite(self.fs)):
            raise InvalidConfig(f"sampling rate must be positive, got {self.fs}")
        if self.label is not None and self.label not in LABELS:
            raise InvalidConfig(f"label must be one of {LABELS}, got {self.label}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "fs", float(self.fs))

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    def with_data(self, data: np.ndarray) -> "Trial":
        return Trial(data, self.label, self.fs)


@dataclass(frozen=True)
class TrialSet:
    trials: tuple[Trial, ...]
    channel_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        trials = tuple(self.trials)
        if not trials:
            raise SchemaViolation("a trial set needs at least one trial")
        shape, fs = trials[0].data.shape, trials[0].fs
        for i, t in enumerate(trials):
            if t.data.shape != shape:
                raise ShapeMismatch(
                    f"trial {i} has shape {t.data.shape}, expected {shape}"
                )
            if t.fs != fs:
                raise ShapeMismatch(f"trial {i} has fs {t.fs}, expected {fs}")
        names = tuple(self.channel_names) or tuple(
            f"ch{i + 1}" for i in range(shape[0])
        )
        if len(names) != shape[0]:
            raise ShapeMismatch(
                f"{len(names)} channel names for {shape[0]} channels"
            )
        object.__setattr__(self, "trials", trials)
        object.__setattr__(self, "channel_names", names)

    @classmethod
    def from_arrays(cls, X, labels, fs, channel_names: Sequence[str] = ()) -> "TrialSet":
        """Build from an ``N x C x P`` array and ``N`` labels (or ``None``)."""
        X = np.asarray(X)
        if labels is None:
            labels = [None] * len(X)
        return cls(
            tuple(Trial(x, None if y is None else int(y), fs) for x, y in zip(X, labels)),
            tuple(channel_names),
        )

    def __len__(self) -> int:
        return len(self.trials)

    def __getitem__(self, i) -> Trial:
        return self.trials[i]

    def __iter__(self):
        return iter(self.trials)

    @property
    def n_channels(self) -> int:
        return self.trials[0].n_channels

    @property
    def n_samples(self) -> int:
        return self.trials[0].n_samples

    @property
    def fs(self) -> float:
        return self.trials[0].fs

    @cached_property
    def data(self) -> np.ndarray:
        """Stacked ``N x C x P`` read-only view of all trials."""
        arr = np.stack([t.data for t in self.trials])
        arr.setflags(write=False)
        return arr

    @cached_property
    def labels(self) -> np.ndarray:
        if any(t.label is None for t in self.trials):
            raise InvalidConfig("trial set contains unlabelled trials")
        arr = np.array([t.label for t in self.trials], dtype=int)
        arr.setflags(write=False)
        return arr

    def has_both_classes(self) -> bool:
        return set(self.labels.tolist()) == set(LABELS)

    def subset(self, indices: Iterable[int]) -> "TrialSet":
        return TrialSet(tuple(self.trials[i] for i in indices), self.channel_names)

    def with_labels(self, labels) -> "TrialSet":
        return TrialSet(
            tuple(Trial(t.data, int(y), t.fs) for t, y in zip(self.trials, labels)),
            self.channel_names,
        )


# ---------------------------------------------------------------------------
# raw trial files and manifests


def save_trial(trial: Trial, path) -> None:
    """Write ``trial.data`` as raw little-endian float32 (row-major)."""
    np.ascontiguousarray(trial.data, dtype=TRIAL_DTYPE).tofile(str(path))


def load_trial(path, n_channels: int) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"trial file not found: {path}")
    flat = np.fromfile(str(path), dtype=TRIAL_DTYPE)
    if flat.size == 0 or flat.size % n_channels:
        raise ShapeMismatch(
            f"{path.name}: {flat.size} samples is not a multiple of {n_channels} channels"
        )
    return flat.reshape(n_channels, -1)


def load_dataset(manifest_path) -> TrialSet:
    """Load the trials listed in a JSON manifest, cropped to its epoch window."""
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise MissingFile(f"manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"manifest is not valid JSON: {exc}") from exc
    try:
        jsonschema.validate(manifest, MANIFEST_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SchemaViolation(f"manifest invalid at {where}: {exc.message}") from exc

    fs = float(manifest["fs_hz"])
    channels = manifest["channels"]
    window = manifest.get("window", DEFAULT_WINDOW)
    length = int(round(window["length_s"] * fs))
    if length < 2:
        raise SchemaViolation("epoch window shorter than two samples")

    root = manifest_path.parent
    trials = []
    for entry in manifest["trials"]:
        raw = load_trial(root / entry["file"], len(channels))
        start = int(round((entry.get("onset_s", 0.0) + window["offset_s"]) * fs))
        if start < 0 or start + length > raw.shape[1]:
            raise ShapeMismatch(
                f"{entry['file']}: window [{start}, {start + length}) outside "
                f"{raw.shape[1]} samples"
            )
        epoch = raw[:, start:start + length]
        if not np.all(np.isfinite(epoch)):
            raise NonFiniteSample(f"{entry['file']} contains non-finite samples")
        trials.append(Trial(epoch, entry["label"], fs))
    return TrialSet(tuple(trials), tuple(channels))


def save_dataset(trials: TrialSet, out_dir, name: str = "dataset", extra: dict | None = None) -> Path:
    """Write every trial plus a manifest whose window covers the whole epoch.

    ``extra`` keys (e.g. a provenance block) are merged into the manifest.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, t in enumerate(trials):
        fname = f"trial_{i:04d}.f32"
        save_trial(t, out_dir / fname)
        entries.append({"file": fname, "label": t.label})
    manifest = {
        "name": name,
        "fs_hz": trials.fs,
        "channels": list(trials.channel_names),
        "window": {"offset_s": 0.0, "length_s": trials.n_samples / trials.fs},
        "trials": entries,
    }
    if extra:
        manifest.update(extra)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


# ---------------------------------------------------------------------------
# planted-subclass generator


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the planted-subclass generator.

    Each class mixes ``subclasses_per_class`` generators. Generator ``s`` of
    either class oscillates at ``band_centers[s]`` and projects onto its own
    random spatial pattern, so classes differ spatially and subclasses differ
    spectrally. ``snr_db`` compares the mean per-channel signal power with
    the white-noise power inside a ``snr_bandwidth_hz`` wide band around the
    oscillation (one filter-bank band by default).
    """

    n_per_class: int = 60
    channels: int = 8
    samples: int = 500
    fs: float = 250.0
    subclasses_per_class: int = 2
    band_centers: tuple[float, ...] = (10.0, 22.0)
    snr_db: float = 15.0
    seed: int = 0
    amplitude: float = 10.0
    snr_bandwidth_hz: float = 4.0

    def __post_init__(self):
        object.__setattr__(self, "band_centers", tuple(float(b) for b in self.band_centers))
        if not self.n_per_class >= self.subclasses_per_class >= 1:
            raise InvalidConfig("need n_per_class >= subclasses_per_class >= 1")
        if self.channels < 1 or self.samples < 2 or not self.fs > 0:
            raise InvalidConfig("need channels >= 1, samples >= 2, fs > 0")
        if len(self.band_centers) != self.subclasses_per_class:
            raise InvalidConfig(
                f"{len(self.band_centers)} band centers for "
                f"{self.subclasses_per_class} subclasses"
            )
        if any(not 0 < f < self.fs / 2 for f in self.band_centers):
            raise InvalidConfig("band centers must lie in (0, fs/2)")
        if not math.isfinite(self.snr_db):
            raise InvalidConfig("snr_db must be finite")
        if not 0 < self.snr_bandwidth_hz <= self.fs / 2:
            raise InvalidConfig("snr_bandwidth_hz must lie in (0, fs/2]")
        if self.seed < 0:
            raise InvalidConfig("seed must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown synth keys: {sorted(unknown)}")
        return cls(**d)


def planted_subclasses(cfg: SynthConfig) -> np.ndarray:
    """Generator (subclass) index of every trial produced by :func:`synth_dataset`."""
    per_class = (np.arange(cfg.n_per_class) * cfg.subclasses_per_class) // cfg.n_per_class
    return np.concatenate([per_class, per_class])


def synth_dataset(cfg: SynthConfig) -> TrialSet:
    """Generate ``2 * n_per_class`` float32 trials, class 1 first.

    A pure function of ``cfg``. Noise variance is set so that the SNR inside
    the ``cfg.snr_bandwidth_hz`` reference band equals ``cfg.snr_db``.
    """
    rng = np.random.default_rng(cfg.seed)
    S, C = cfg.subclasses_per_class, cfg.channels
    patterns = rng.standard_normal((2, S, C))
    patterns /= np.linalg.norm(patterns, axis=-1, keepdims=True)

    signal_power = cfg.amplitude ** 2 / (2.0 * C)
    in_band_fraction = cfg.snr_bandwidth_hz / (cfg.fs / 2.0)
    noise_sd = math.sqrt(signal_power / (10 ** (cfg.snr_db / 10.0) * in_band_fraction))
    t = np.arange(cfg.samples) / cfg.fs
    sub = planted_subclasses(cfg)

    trials = []
    for n in range(2 * cfg.n_per_class):
        cls = n // cfg.n_per_class
        s = sub[n]
        phase = rng.uniform(0.0, 2 * np.pi)
        wave = cfg.amplitude * np.sin(2 * np.pi * cfg.band_centers[s] * t + phase)
        x = patterns[cls, s][:, None] * wave[None, :]
        x = x + noise_sd * rng.standard_normal((C, cfg.samples))
        trials.append(Trial(x.astype(TRIAL_DTYPE), cls + 1, cfg.fs))
    names = tuple(f"ch{i + 1}" for i in range(C))
    return TrialSet(tuple(trials), names)
