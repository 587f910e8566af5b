"""Beat detection and HR/HRV extraction.

HR is 60 / mean RR (bpm) and HRV is RMSSD (ms), both computed every
``step_s`` seconds over the preceding ``lookback_s`` seconds of beats.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.signal import find_peaks

from .errors import (
    InsufficientBeats,
    InvalidConfig,
    NoBeatsFound,
    SeriesTooShort,
    SignalTooShort,
)
from .signalio import BeatTruth, RawSignal, SignalKind

RR_MIN_S = 0.25
RR_MAX_S = 3.0


@dataclass(frozen=True)
class BeatSeries:
    beat_times: np.ndarray
    source_kind: SignalKind = SignalKind.ECG

    def __post_init__(self):
        bt = np.asarray(self.beat_times, dtype=np.float64)
        if np.any(np.diff(bt) <= 0):
            raise InvalidConfig("beat_times must be strictly increasing")
        object.__setattr__(self, "beat_times", bt)


@dataclass(frozen=True)
class VitalSeries:
    """The multivariate (HR, HRV) series fed to the model."""

    hr_bpm: np.ndarray
    hrv_ms: np.ndarray
    step_s: float = 10.0
    lookback_s: float = 60.0
    t0: float = 0.0

    def __post_init__(self):
        hr = np.asarray(self.hr_bpm, dtype=np.float64)
        hrv = np.asarray(self.hrv_ms, dtype=np.float64)
        if hr.shape != hrv.shape:
            raise InvalidConfig("hr and hrv must have equal length")
        object.__setattr__(self, "hr_bpm", hr)
        object.__setattr__(self, "hrv_ms", hrv)

    def __len__(self):
        return len(self.hr_bpm)

    def times(self) -> np.ndarray:
        return self.t0 + np.arange(len(self)) * self.step_s

    def values(self) -> np.ndarray:
        """T x 2 matrix, columns (hr, hrv)."""
        return np.stack([self.hr_bpm, self.hrv_ms], axis=1)


@dataclass(frozen=True)
class WindowBatch:
    """Stride-1 sliding windows over a VitalSeries."""

    windows: np.ndarray  # (num_windows, K, n)
    labels: np.ndarray | None = None  # (num_windows,)
    t0: float | None = None  # wall time of the first series point
    step_s: float | None = None

    def __post_init__(self):
        w = np.asarray(self.windows, dtype=np.float64)
        if w.ndim != 3:
            raise InvalidConfig("windows must be (num, K, n)")
        object.__setattr__(self, "windows", w)
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=np.int64)
            if lab.shape != (w.shape[0],):
                raise InvalidConfig("labels must be one per window")
            object.__setattr__(self, "labels", lab)

    @property
    def num_windows(self) -> int:
        return self.windows.shape[0]

    @property
    def window_len(self) -> int:
        return self.windows.shape[1]

    @property
    def n_vars(self) -> int:
        return self.windows.shape[2]


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray  # (n,)
    std: np.ndarray  # (n,), floored


# ---------------------------------------------------------------------------
# beat detection

_ENVELOPE_SMOOTH_S = {SignalKind.ECG: 0.15, SignalKind.BVP: 0.30}
_DETREND_S = 0.6
_PRESMOOTH_S = 0.03  # suppresses wideband noise before differentiation
_REFRACTORY_S = 0.25
_THRESHOLD_FRAC = 0.5
_THRESHOLD_BLOCK_S = 10.0


def detect_beats(signal: RawSignal) -> BeatSeries:
    """Locate beats via a derivative-energy envelope and adaptive threshold.

    Detrend (0.6 s moving average), square the derivative, smooth the
    energy, threshold at half the blockwise 95th percentile, pick peaks
    with a 250 ms refractory period and refine each to the local waveform
    maximum.
    """
    fs = signal.rate_hz
    if fs < 32:
        raise InvalidConfig(f"detector needs >= 32 Hz, got {fs}")
    if signal.duration_s < 2.0:
        raise SignalTooShort(f"need >= 2 s of signal, got {signal.duration_s:.3f}")

    x = signal.samples
    detrended = x - uniform_filter1d(x, max(1, int(round(_DETREND_S * fs))))
    detrended = uniform_filter1d(detrended, max(1, int(round(_PRESMOOTH_S * fs))))
    energy = np.gradient(detrended) ** 2
    smooth = _ENVELOPE_SMOOTH_S[signal.kind]
    env = uniform_filter1d(energy, max(1, int(round(smooth * fs))))

    block = max(1, int(round(_THRESHOLD_BLOCK_S * fs)))
    n_blocks = max(1, math.ceil(len(env) / block))
    levels = np.array([
        np.percentile(env[i * block:(i + 1) * block], 95) for i in range(n_blocks)
    ])
    thr = _THRESHOLD_FRAC * np.repeat(levels, block)[:len(env)]

    peaks, _ = find_peaks(env, height=thr, distance=max(1, int(round(_REFRACTORY_S * fs))))
    if len(peaks) == 0:
        raise NoBeatsFound("no envelope peaks above the adaptive threshold")

    # refine to the true local maximum of the detrended waveform
    refine = int(round(0.1 * fs))
    refined = []
    for p in peaks:
        lo, hi = max(0, p - refine), min(len(x), p + refine + 1)
        refined.append(lo + int(np.argmax(detrended[lo:hi])))
    refined = np.unique(refined)

    times = signal.start_time + refined / fs
    kept = [times[0]]
    for t in times[1:]:
        if t - kept[-1] >= RR_MIN_S:
            kept.append(t)
    # beats creating implausibly short RR were dropped above; long gaps are
    # genuine missed-beat regions and are left in place
    return BeatSeries(np.array(kept), signal.kind)


# ---------------------------------------------------------------------------
# vitals extraction


def compute_vitals(beats: BeatSeries, step_s: float = 10.0,
                   lookback_s: float = 60.0) -> VitalSeries:
    """HR and RMSSD per step over the preceding lookback window.

    A step's window is (wall - lookback_s, wall]. Windows with fewer than
    3 beats carry the previous step's values forward; the first window must
    be valid.
    """
    if step_s <= 0 or lookback_s <= 0:
        raise InvalidConfig("step_s and lookback_s must be positive")
    bt = beats.beat_times
    span = bt[-1] - bt[0] if len(bt) >= 2 else 0.0
    if span < lookback_s:
        raise InsufficientBeats(
            f"beats span {span:.1f} s < lookback {lookback_s} s")

    n_steps = int(math.floor((span - lookback_s) / step_s)) + 1
    t0 = bt[0] + lookback_s
    hr = np.empty(n_steps)
    hrv = np.empty(n_steps)
    for i in range(n_steps):
        wall = t0 + i * step_s
        sel = bt[(bt > wall - lookback_s) & (bt <= wall)]
        if len(sel) >= 3:
            rr = np.diff(sel)
            hr[i] = 60.0 / float(np.mean(rr))
            hrv[i] = 1000.0 * math.sqrt(float(np.mean(np.diff(rr) ** 2)))
        elif i == 0:
            raise InsufficientBeats("first lookback window has < 3 beats")
        else:
            hr[i] = hr[i - 1]
            hrv[i] = hrv[i - 1]
    return VitalSeries(hr, hrv, step_s, lookback_s, t0)


def make_windows(series: VitalSeries, k: int = 5,
                 labels: np.ndarray | None = None) -> WindowBatch:
    """Stride-1 length-k windows; window label = any covered point labeled."""
    if k < 1:
        raise InvalidConfig("window length must be >= 1")
    t = len(series)
    if t < k:
        raise SeriesTooShort(f"series length {t} < window length {k}")
    vals = series.values()
    num = t - k + 1
    windows = np.stack([vals[i:i + k] for i in range(num)])
    win_labels = None
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape != (t,):
            raise InvalidConfig("labels must be one per time point")
        win_labels = np.array([int(labels[i:i + k].any()) for i in range(num)])
    return WindowBatch(windows, win_labels, t0=series.t0, step_s=series.step_s)


def normalize(batch: WindowBatch, stats: NormStats | None = None
              ) -> tuple[WindowBatch, NormStats]:
    """Per-variable z-score. Stats are computed here only when absent
    (training); pass train stats for validation/test batches."""
    if stats is None:
        flat = batch.windows.reshape(-1, batch.n_vars)
        mean = flat.mean(axis=0)
        std = np.maximum(flat.std(axis=0), 1e-8)
        stats = NormStats(mean, std)
    scaled = (batch.windows - stats.mean) / stats.std
    return WindowBatch(scaled, batch.labels, batch.t0, batch.step_s), stats


def denormalize(batch: WindowBatch, stats: NormStats) -> WindowBatch:
    raw = batch.windows * stats.std + stats.mean
    return WindowBatch(raw, batch.labels, batch.t0, batch.step_s)


def stress_point_labels(series: VitalSeries, truth: BeatTruth) -> np.ndarray:
    """Per-point ground truth: 1 when the point's lookback window overlaps
    any stress interval (each point summarizes the preceding lookback)."""
    labels = np.zeros(len(series), dtype=np.int64)
    for i, wall in enumerate(series.times()):
        lo = wall - series.lookback_s
        for s, e in truth.stress_intervals:
            if s < wall and e > lo:
                labels[i] = 1
                break
    return labels


# ---------------------------------------------------------------------------
# CSV interchange


def save_vitals(series: VitalSeries, path, labels: np.ndarray | None = None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["time_s", "hr_bpm", "hrv_ms"] + (["label"] if labels is not None else [])
        w.writerow(header)
        for i, t in enumerate(series.times()):
            row = [f"{t:.9g}", f"{series.hr_bpm[i]:.12g}", f"{series.hrv_ms[i]:.12g}"]
            if labels is not None:
                row.append(str(int(labels[i])))
            w.writerow(row)


def load_vitals(path, lookback_s: float = 60.0
                ) -> tuple[VitalSeries, np.ndarray | None]:
    from .errors import MalformedFile

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise MalformedFile(f"{path}: empty file")
        header = [h.strip().lower() for h in header]
        if header[:3] != ["time_s", "hr_bpm", "hrv_ms"]:
            raise MalformedFile(f"{path}: bad vitals header {header}")
        has_labels = len(header) == 4 and header[3] == "label"
        t, hr, hrv, lab = [], [], [], []
        for row in reader:
            t.append(float(row[0]))
            hr.append(float(row[1]))
            hrv.append(float(row[2]))
            if has_labels:
                lab.append(int(row[3]))
    t = np.array(t)
    if len(t) < 2:
        raise MalformedFile(f"{path}: need at least 2 rows")
    step = float(np.median(np.diff(t)))
    series = VitalSeries(np.array(hr), np.array(hrv), step, lookback_s, t0=float(t[0]))
    return series, (np.array(lab) if has_labels else None)
