"""Raw waveform ingestion, resampling and the synthetic generator.

The synthetic generator is the ground-truth source for every downstream
test: it emits an ECG/BVP-like waveform together with the exact beat times
and stress intervals used to build it.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateSignal,
    InvalidConfig,
    IrregularSampling,
    MalformedFile,
    NonFiniteSample,
    UpsampleRequested,
)


class SignalKind(Enum):
    ECG = "ECG"
    BVP = "BVP"


@dataclass(frozen=True)
class RawSignal:
    """Uniformly sampled 1-D physiological waveform."""

    samples: np.ndarray
    rate_hz: float
    kind: SignalKind = SignalKind.ECG
    start_time: float = 0.0

    def __post_init__(self):
        if self.rate_hz <= 0:
            raise InvalidConfig(f"rate_hz must be positive, got {self.rate_hz}")
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64))

    @property
    def duration_s(self) -> float:
        return (len(self.samples) - 1) / self.rate_hz

    def times(self) -> np.ndarray:
        return self.start_time + np.arange(len(self.samples)) / self.rate_hz


@dataclass(frozen=True)
class BeatTruth:
    """Ground truth for a synthetic signal: beat instants and stress spans."""

    beat_times: np.ndarray
    stress_intervals: list[tuple[float, float]] = field(default_factory=list)

    def __post_init__(self):
        bt = np.asarray(self.beat_times, dtype=np.float64)
        if np.any(np.diff(bt) <= 0):
            raise InvalidConfig("beat_times must be strictly increasing")
        for start, end in self.stress_intervals:
            if not start < end:
                raise InvalidConfig(f"bad stress interval ({start}, {end})")
        ordered = sorted(self.stress_intervals)
        for (_, e0), (s1, _) in zip(ordered, ordered[1:]):
            if s1 < e0:
                raise InvalidConfig("stress intervals must be pairwise disjoint")
        object.__setattr__(self, "beat_times", bt)

    def is_stressed(self, t: float) -> bool:
        return any(s <= t < e for s, e in self.stress_intervals)


@dataclass(frozen=True)
class GeneratorConfig:
    duration_s: float = 1800.0
    base_hr_bpm: float = 70.0
    hr_jitter_bpm: float = 3.0
    stress_hr_delta_bpm: float = 30.0
    stress_hrv_scale: float = 0.5
    episode_count: int = 0
    episode_len_s: float = 120.0
    noise_snr_db: float = math.inf
    seed: int = 0
    rate_hz: float = 256.0
    kind: SignalKind = SignalKind.ECG

    def __post_init__(self):
        if self.duration_s <= 0:
            raise InvalidConfig("duration_s must be positive")
        peak = self.base_hr_bpm + self.stress_hr_delta_bpm
        if not (30.0 <= self.base_hr_bpm <= 220.0) or not (30.0 <= peak <= 220.0):
            raise InvalidConfig("heart rates must stay within [30, 220] bpm")
        if not (0.0 < self.stress_hrv_scale <= 1.0):
            raise InvalidConfig("stress_hrv_scale must be in (0, 1]")
        if self.episode_count < 0:
            raise InvalidConfig("episode_count must be >= 0")
        if self.episode_count > 0:
            region = 0.45 * self.duration_s
            if self.episode_count * self.episode_len_s > region:
                raise InvalidConfig("stress episodes do not fit in the signal")
        if self.rate_hz <= 0:
            raise InvalidConfig("rate_hz must be positive")


# ---------------------------------------------------------------------------
# ingestion


def load_signal(path, fmt: str = "csv", rate_hz: float | None = None,
                kind: SignalKind = SignalKind.ECG) -> RawSignal:
    """Load a waveform from disk.

    ``csv`` expects a ``time_s,value`` header (rate inferred, uniformity
    checked) or a single ``value`` column with ``rate_hz`` given out-of-band.
    ``raw_f32`` is a little-endian float32 stream; ``rate_hz`` is required.
    """
    path = Path(path)
    if fmt == "raw_f32":
        if rate_hz is None:
            raise InvalidConfig("raw_f32 needs an explicit rate_hz")
        samples = np.fromfile(path, dtype="<f4").astype(np.float64)
        _check_finite(samples)
        return RawSignal(samples, rate_hz, kind)
    if fmt != "csv":
        raise InvalidConfig(f"unknown format {fmt!r}")

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedFile(f"{path}: empty file")
        header = [h.strip().lower() for h in header]
        rows = list(reader)

    if header == ["time_s", "value"]:
        try:
            t = np.array([float(r[0]) for r in rows])
            v = np.array([float(r[1]) for r in rows])
        except (ValueError, IndexError) as exc:
            raise MalformedFile(f"{path}: bad row ({exc})")
        _check_finite(v)
        if not np.all(np.isfinite(t)):
            raise MalformedFile(f"{path}: non-finite timestamp")
        if len(t) < 2:
            raise MalformedFile(f"{path}: need at least 2 samples")
        gaps = np.diff(t)
        dt = float(np.median(gaps))
        if dt <= 0:
            raise IrregularSampling(f"{path}: timestamps not increasing")
        if np.max(np.abs(gaps - dt)) > 0.01 * dt:
            raise IrregularSampling(f"{path}: non-uniform sampling")
        return RawSignal(v, 1.0 / dt, kind, start_time=float(t[0]))

    if header == ["value"]:
        if rate_hz is None:
            raise InvalidConfig("single-column CSV needs an explicit rate_hz")
        try:
            v = np.array([float(r[0]) for r in rows])
        except (ValueError, IndexError) as exc:
            raise MalformedFile(f"{path}: bad row ({exc})")
        _check_finite(v)
        return RawSignal(v, rate_hz, kind)

    raise MalformedFile(f"{path}: unrecognized header {header}")


def _check_finite(samples: np.ndarray):
    if not np.all(np.isfinite(samples)):
        bad = int(np.flatnonzero(~np.isfinite(samples))[0])
        raise NonFiniteSample(f"non-finite sample at index {bad}")


def save_signal(signal: RawSignal, path):
    """Write a waveform as ``time_s,value`` CSV."""
    t = signal.times()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s", "value"])
        for ti, vi in zip(t, signal.samples):
            w.writerow([f"{ti:.9g}", f"{vi:.12g}"])


def save_truth(truth: BeatTruth, path):
    """Write ground truth: beat rows plus stress-interval rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["record", "a", "b"])
        for bt in truth.beat_times:
            w.writerow(["beat", f"{bt:.9g}", ""])
        for s, e in truth.stress_intervals:
            w.writerow(["stress", f"{s:.9g}", f"{e:.9g}"])


def load_truth(path) -> BeatTruth:
    beats, intervals = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["record", "a", "b"]:
            raise MalformedFile(f"{path}: bad truth header")
        for row in reader:
            if row[0] == "beat":
                beats.append(float(row[1]))
            elif row[0] == "stress":
                intervals.append((float(row[1]), float(row[2])))
            else:
                raise MalformedFile(f"{path}: unknown record {row[0]!r}")
    return BeatTruth(np.array(beats), intervals)


# ---------------------------------------------------------------------------
# resampling


def resample(signal: RawSignal, target_hz: float) -> RawSignal:
    """Linear-interpolation downsample to ``target_hz``.

    No anti-alias filter: downstream features are beat-interval based and
    the beat detector runs at >= 32 Hz where this is adequate.
    """
    if len(signal.samples) < 2:
        raise DegenerateSignal("need at least 2 samples to resample")
    if target_hz <= 0:
        raise InvalidConfig("target_hz must be positive")
    if target_hz > signal.rate_hz:
        raise UpsampleRequested(
            f"target {target_hz} Hz above source {signal.rate_hz} Hz")
    duration = signal.duration_s
    out_len = int(math.floor(duration * target_hz)) + 1
    new_t = np.arange(out_len) / target_hz
    old_t = np.arange(len(signal.samples)) / signal.rate_hz
    out = np.interp(new_t, old_t, signal.samples)
    return RawSignal(out, target_hz, signal.kind, signal.start_time)


# ---------------------------------------------------------------------------
# synthetic generator

# R-wave template widths (Gaussian sigma, seconds). BVP is just a broader bump.
_TEMPLATE_SIGMA = {SignalKind.ECG: 0.02, SignalKind.BVP: 0.12}
_AR_COEFF = 0.8  # mild autocorrelation in successive RR intervals


def rr_sigma_s(config: GeneratorConfig) -> float:
    """Baseline RR standard deviation implied by hr_jitter_bpm.

    Maps a +-jitter in bpm around base_hr to RR seconds via the local
    derivative of rr = 60/hr.
    """
    return 60.0 * config.hr_jitter_bpm / config.base_hr_bpm**2


def stress_intervals_for(config: GeneratorConfig) -> list[tuple[float, float]]:
    """Deterministic episode placement, confined to the second half.

    Keeping the first half clean gives every run an anomaly-free prefix to
    train on.
    """
    if config.episode_count == 0:
        return []
    lo, hi = 0.52 * config.duration_s, 0.97 * config.duration_s
    slot = (hi - lo) / config.episode_count
    out = []
    for i in range(config.episode_count):
        center = lo + (i + 0.5) * slot
        out.append((center - config.episode_len_s / 2,
                    center + config.episode_len_s / 2))
    return out


def generate_synthetic(config: GeneratorConfig) -> tuple[RawSignal, BeatTruth]:
    """Render a beat-bump waveform with known beats and stress spans.

    RR intervals follow a Gaussian around 60/base_hr with AR(1)-correlated
    jitter; inside stress episodes the mean shifts to 60/(base+delta) and
    the jitter is multiplied by stress_hrv_scale. The waveform is a train
    of Gaussian bumps on a flat baseline plus white noise at noise_snr_db.
    """
    rng = np.random.default_rng(config.seed)
    intervals = stress_intervals_for(config)
    truth_probe = BeatTruth(np.array([0.0, 1.0]), intervals)  # interval lookup

    base_rr = 60.0 / config.base_hr_bpm
    stress_rr = 60.0 / (config.base_hr_bpm + config.stress_hr_delta_bpm)
    sigma0 = rr_sigma_s(config)

    beats = []
    t = float(rng.uniform(0.1, 0.5))
    z = float(rng.standard_normal())  # unit-variance AR(1) state
    while t < config.duration_s:
        beats.append(t)
        stressed = truth_probe.is_stressed(t)
        mean = stress_rr if stressed else base_rr
        sigma = sigma0 * (config.stress_hrv_scale if stressed else 1.0)
        rr = float(np.clip(mean + sigma * z, 0.25, 3.0))
        t += rr
        z = _AR_COEFF * z + math.sqrt(1 - _AR_COEFF**2) * float(rng.standard_normal())
    beat_times = np.array(beats)

    n = int(round(config.duration_s * config.rate_hz)) + 1
    grid = np.arange(n) / config.rate_hz
    samples = np.zeros(n)
    sig = _TEMPLATE_SIGMA[config.kind]
    half = 4.0 * sig
    for bt in beat_times:
        lo = max(0, int(math.ceil((bt - half) * config.rate_hz)))
        hi = min(n, int(math.floor((bt + half) * config.rate_hz)) + 1)
        seg = grid[lo:hi] - bt
        samples[lo:hi] += np.exp(-0.5 * (seg / sig) ** 2)

    if math.isfinite(config.noise_snr_db):
        power = float(np.mean(samples**2))
        noise_std = math.sqrt(power / 10 ** (config.noise_snr_db / 10))
        samples = samples + noise_std * rng.standard_normal(n)

    signal = RawSignal(samples, config.rate_hz, config.kind)
    return signal, BeatTruth(beat_times, intervals)


# ---------------------------------------------------------------------------
# key=value config files


def parse_kv_file(path) -> dict[str, str]:
    """Parse a plain ``key=value`` file; '#' starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise MalformedFile(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def generator_config_from_file(path) -> GeneratorConfig:
    raw = parse_kv_file(path)
    kwargs = {}
    casts = {
        "duration_s": float, "base_hr_bpm": float, "hr_jitter_bpm": float,
        "stress_hr_delta_bpm": float, "stress_hrv_scale": float,
        "episode_count": int, "episode_len_s": float, "noise_snr_db": float,
        "seed": int, "rate_hz": float,
    }
    for key, value in raw.items():
        if key == "kind":
            kwargs["kind"] = SignalKind(value.upper())
        elif key in casts:
            kwargs[key] = casts[key](value)
        else:
            raise InvalidConfig(f"unknown generator key {key!r}")
    return GeneratorConfig(**kwargs)
