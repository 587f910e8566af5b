"""Anomaly scoring, percentile thresholding and per-signal contributions."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum

import numpy as np
import torch

from .errors import EmptyCalibration, EmptyInput, InvalidConfig, ShapeMismatch
from .model import ReconstructionTransformer
from .vitals import NormStats, VitalSeries, WindowBatch, make_windows, normalize


@dataclass(frozen=True)
class ScoreSeries:
    """Per-point anomaly scores and the per-variable squared errors behind
    them. For model scores, scores[t] == per_var_errors[t].mean()."""

    scores: np.ndarray  # (T,)
    per_var_errors: np.ndarray  # (T, n)
    times: np.ndarray | None = None

    def __len__(self):
        return len(self.scores)


class Calibration(Enum):
    TRAIN_ERRORS = "train_errors"
    VAL_ERRORS = "val_errors"
    SELF = "self"


@dataclass(frozen=True)
class ThresholdSpec:
    low_pct: float = 3.0
    high_pct: float = 97.0
    calibration: Calibration = Calibration.VAL_ERRORS
    two_sided: bool = True

    def __post_init__(self):
        if not (0 <= self.low_pct < self.high_pct <= 100):
            raise InvalidConfig("need 0 <= low_pct < high_pct <= 100")


@dataclass(frozen=True)
class DetectionResult:
    labels: np.ndarray  # (T,) in {0, 1}
    anomaly_indices: np.ndarray
    tau_low: float
    tau_high: float
    contributions: np.ndarray  # (T, n), rows sum to 1
    scores: np.ndarray
    times: np.ndarray | None = None


def score(model: ReconstructionTransformer, batch: WindowBatch) -> ScoreSeries:
    """Squared reconstruction error per series point.

    Each point t >= K-1 is scored at the last position of the window ending
    there (causal); the first K-1 points inherit the first window's
    positional errors. The point score is the mean over variables.
    """
    cfg = model.config
    if batch.window_len != cfg.window_len or batch.n_vars != cfg.n_vars:
        raise ShapeMismatch(
            f"batch windows ({batch.window_len}, {batch.n_vars}) do not match "
            f"model config ({cfg.window_len}, {cfg.n_vars})")
    dtype = next(model.parameters()).dtype
    x = torch.from_numpy(np.ascontiguousarray(batch.windows)).to(dtype)
    with torch.no_grad():
        err = ((x - model(x)) ** 2).double().numpy()  # (N, K, n)
    k = cfg.window_len
    t_total = batch.num_windows + k - 1
    per_var = np.empty((t_total, batch.n_vars))
    per_var[:k - 1] = err[0, :k - 1]
    per_var[k - 1:] = err[:, -1, :]
    times = None
    if batch.t0 is not None and batch.step_s is not None:
        times = batch.t0 + np.arange(t_total) * batch.step_s
    return ScoreSeries(per_var.mean(axis=1), per_var, times)


def percentile(values: np.ndarray, q: float) -> float:
    """Linear-interpolation percentile (q=0 -> min, q=100 -> max)."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise EmptyInput("percentile of empty array")
    if not np.all(np.isfinite(values)):
        raise EmptyInput("percentile requires finite values")
    if not (0 <= q <= 100):
        raise InvalidConfig("percentile q must be in [0, 100]")
    return float(np.percentile(values, q, method="linear"))


def contributions(scores: ScoreSeries, epsilon: float = 1e-12) -> np.ndarray:
    """Per-variable share of the reconstruction error at each point."""
    e = scores.per_var_errors + epsilon
    return e / e.sum(axis=1, keepdims=True)


def threshold(scores: ScoreSeries, calib_scores: ScoreSeries,
              spec: ThresholdSpec = ThresholdSpec()) -> DetectionResult:
    """Label points whose score falls outside the calibration percentiles.

    Strict inequalities: a point is anomalous iff score < tau_low (two-sided
    mode only) or score > tau_high.
    """
    calib = np.asarray(calib_scores.scores)
    if calib.size == 0:
        raise EmptyCalibration("no calibration scores")
    tau_low = percentile(calib, spec.low_pct)
    tau_high = percentile(calib, spec.high_pct)
    s = scores.scores
    if spec.two_sided:
        labels = ((s < tau_low) | (s > tau_high)).astype(np.int64)
    else:
        labels = (s > tau_high).astype(np.int64)
    return DetectionResult(
        labels=labels,
        anomaly_indices=np.flatnonzero(labels),
        tau_low=tau_low,
        tau_high=tau_high,
        contributions=contributions(scores),
        scores=s.copy(),
        times=scores.times,
    )


def detect(model: ReconstructionTransformer, vitals: VitalSeries,
           spec: ThresholdSpec = ThresholdSpec(),
           stats: NormStats | None = None,
           calib_scores: ScoreSeries | None = None) -> DetectionResult:
    """Window, normalize, score and threshold a vital series.

    ``stats`` should be the training normalization stats; ``calib_scores``
    the held-out (validation) scores. When calib_scores is None the series
    self-calibrates.
    """
    batch = make_windows(vitals, model.config.window_len)
    batch, _ = normalize(batch, stats)
    s = score(model, batch)
    return threshold(s, calib_scores if calib_scores is not None else s, spec)


def save_detection(result: DetectionResult, path):
    """CSV: time_s,score,label,tau_low,tau_high,contrib_hr,contrib_hrv,..."""
    n = result.contributions.shape[1]
    contrib_names = (["contrib_hr", "contrib_hrv"] if n == 2
                     else [f"contrib_{i}" for i in range(n)])
    times = result.times
    if times is None:
        times = np.arange(len(result.labels), dtype=np.float64)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s", "score", "label", "tau_low", "tau_high"] + contrib_names)
        for i in range(len(result.labels)):
            row = [f"{times[i]:.9g}", f"{result.scores[i]:.12g}",
                   str(int(result.labels[i])),
                   f"{result.tau_low:.12g}", f"{result.tau_high:.12g}"]
            row += [f"{c:.12g}" for c in result.contributions[i]]
            w.writerow(row)
