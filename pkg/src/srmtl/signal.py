"""Overlapping Butterworth filter bank with zero-phase application."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import signal as sps

from .dataio import Trial, TrialSet
from .errors import InvalidBand, SampleRateMismatch, UnstableFilter

__all__ = [
    "BandSpec",
    "FilterBank",
    "CANONICAL_BANDS",
    "design_filter_bank",
    "apply_filter_bank",
    "filter_array",
    "filter_trialset",
    "parse_band_sweep",
    "read_band_list",
]

CANONICAL_BANDS = ((1.0, 3.0), (4.0, 7.0), (8.0, 13.0), (14.0, 30.0))

# Float slack when deciding whether the last swept band still fits.
_EDGE_EPS = 1e-9


@dataclass(frozen=True)
class BandSpec:
    """A swept band layout ``[lo, lo + width], [lo + step, ...]`` or explicit pairs."""

    lo: float | None = None
    hi: float | None = None
    width: float | None = None
    step: float | None = None
    pairs: tuple[tuple[float, float], ...] | None = None

    @classmethod
    def sweep(cls, lo, hi, width, step) -> "BandSpec":
        return cls(float(lo), float(hi), float(width), float(step))

    @classmethod
    def explicit(cls, pairs) -> "BandSpec":
        return cls(pairs=tuple((float(a), float(b)) for a, b in pairs))

    def bands(self) -> list[tuple[float, float]]:
        if self.pairs is not None:
            if not self.pairs:
                raise InvalidBand("explicit band list is empty")
            for lo, hi in self.pairs:
                if not 0 < lo < hi:
                    raise InvalidBand(f"band ({lo}, {hi}) needs 0 < lo < hi")
            return list(self.pairs)
        if None in (self.lo, self.hi, self.width, self.step):
            raise InvalidBand("a swept spec needs lo, hi, width and step")
        if not (0 < self.lo < self.hi and self.width > 0 and self.step > 0):
            raise InvalidBand("a swept spec needs 0 < lo < hi, width > 0, step > 0")
        out = []
        k = 0
        while True:
            lo = self.lo + k * self.step
            hi = lo + self.width
            if hi > self.hi + _EDGE_EPS:
                break
            out.append((lo, hi))
            k += 1
        if not out:
            raise InvalidBand(f"width {self.width} does not fit in [{self.lo}, {self.hi}]")
        return out

    def to_dict(self) -> dict:
        if self.pairs is not None:
            return {"pairs": [list(p) for p in self.pairs]}
        return {"lo": self.lo, "hi": self.hi, "width": self.width, "step": self.step}

    @classmethod
    def from_dict(cls, d: dict) -> "BandSpec":
        if "pairs" in d:
            return cls.explicit(d["pairs"])
        return cls.sweep(d["lo"], d["hi"], d["width"], d["step"])


DEFAULT_BANDS = BandSpec.sweep(4, 40, 4, 2)


@dataclass(frozen=True)
class FilterBank:
    """Designed bandpass filters.

    ``b``/``a`` hold the transfer-function coefficients of each band and
    ``sos`` the equivalent second-order sections, which are what actually
    gets applied (the polynomial form loses precision for narrow low bands).
    """

    bands: tuple[tuple[float, float], ...]
    b: tuple[np.ndarray, ...]
    a: tuple[np.ndarray, ...]
    sos: tuple[np.ndarray, ...]
    order: int
    fs: float

    def __len__(self) -> int:
        return len(self.bands)

    @property
    def padlen(self) -> int:
        # order counts poles of the bandpass (twice the prototype order)
        return 3 * 2 * self.order


def design_filter_bank(spec: BandSpec | Sequence, fs: float, order: int = 4) -> FilterBank:
    """Design one Butterworth bandpass of prototype ``order`` per band.

    ``spec`` may also be a plain sequence of ``(lo, hi)`` pairs.
    """
    if not isinstance(spec, BandSpec):
        spec = BandSpec.explicit(spec)
    nyq = fs / 2.0
    bands = spec.bands()
    bs, as_, soss = [], [], []
    for lo, hi in bands:
        if hi >= nyq:
            raise InvalidBand(f"band edge {hi} Hz is at or above Nyquist ({nyq} Hz)")
        z, p, k = sps.butter(order, [lo, hi], btype="bandpass", fs=fs, output="zpk")
        if np.any(np.abs(p) >= 1.0):
            raise UnstableFilter(f"band ({lo}, {hi}) has poles on or outside the unit circle")
        b, a = sps.zpk2tf(z, p, k)
        if np.any(np.abs(np.roots(a)) >= 1.0):
            raise UnstableFilter(f"band ({lo}, {hi}) denominator is unstable after expansion")
        bs.append(b)
        as_.append(a)
        soss.append(sps.zpk2sos(z, p, k))
    return FilterBank(tuple(bands), tuple(bs), tuple(as_), tuple(soss), order, float(fs))


def _check_fs(fs: float, bank: FilterBank) -> None:
    if not np.isclose(fs, bank.fs, rtol=0, atol=1e-9):
        raise SampleRateMismatch(f"trial fs {fs} Hz, filter bank designed for {bank.fs} Hz")


def filter_array(x: np.ndarray, bank: FilterBank, band: int) -> np.ndarray:
    """Zero-phase filter ``x`` along its last axis with band ``band``."""
    return sps.sosfiltfilt(bank.sos[band], x, axis=-1, padtype="even", padlen=bank.padlen)


def apply_filter_bank(trial: Trial, bank: FilterBank) -> list[Trial]:
    """Filter one trial through every band; shapes and labels are preserved."""
    _check_fs(trial.fs, bank)
    x = np.asarray(trial.data, dtype=np.float64)
    return [trial.with_data(filter_array(x, bank, g)) for g in range(len(bank))]


def filter_trialset(trials: TrialSet, bank: FilterBank) -> np.ndarray:
    """Filter all trials at once; returns a ``G x N x C x P`` float64 array."""
    _check_fs(trials.fs, bank)
    x = np.asarray(trials.data, dtype=np.float64)
    return np.stack([filter_array(x, bank, g) for g in range(len(bank))])


def parse_band_sweep(text: str) -> BandSpec:
    """Parse ``lo:hi:width:step`` as used on the command line."""
    parts = text.split(":")
    if len(parts) != 4:
        raise InvalidBand(f"expected lo:hi:width:step, got {text!r}")
    try:
        return BandSpec.sweep(*(float(p) for p in parts))
    except ValueError as exc:
        raise InvalidBand(f"non-numeric band sweep {text!r}") from exc


def read_band_list(path) -> BandSpec:
    """Read a band list file: one ``lo,hi`` pair per line, ``#`` comments allowed."""
    pairs = []
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            lo, hi = (float(v) for v in line.split(","))
        except ValueError as exc:
            raise InvalidBand(f"{path}:{n}: expected 'lo,hi', got {line!r}") from exc
        pairs.append((lo, hi))
    return BandSpec.explicit(pairs)
