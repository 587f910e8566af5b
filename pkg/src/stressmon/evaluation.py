"""Metrics, nonparametric statistics, the z-score baseline and the
sampling-interval ablation harness."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sstats

from .errors import (
    EmptyCalibration,
    InvalidConfig,
    LengthMismatch,
    MalformedFile,
    SeriesTooShort,
    TooFewMethods,
    UnknownControl,
)
from .detection import ScoreSeries, ThresholdSpec, score, threshold
from .model import ModelConfig, ReconstructionTransformer
from .signalio import BeatTruth, RawSignal
from .training import TrainConfig, split_train_val, train
from .vitals import (
    VitalSeries,
    WindowBatch,
    compute_vitals,
    detect_beats,
    make_windows,
    normalize,
    stress_point_labels,
)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion(pred: np.ndarray, true: np.ndarray) -> ConfusionCounts:
    pred = np.asarray(pred).astype(bool)
    true = np.asarray(true).astype(bool)
    if pred.shape != true.shape:
        raise LengthMismatch(f"{pred.shape} vs {true.shape}")
    return ConfusionCounts(
        tp=int(np.sum(pred & true)),
        fp=int(np.sum(pred & ~true)),
        tn=int(np.sum(~pred & ~true)),
        fn=int(np.sum(~pred & true)),
    )


def f1(c: ConfusionCounts) -> float:
    denom = 2 * c.tp + c.fp + c.fn
    return 2 * c.tp / denom if denom else 0.0


def fpr(c: ConfusionCounts) -> float:
    denom = c.fp + c.tn
    return c.fp / denom if denom else 0.0


def fnr(c: ConfusionCounts) -> float:
    denom = c.fn + c.tp
    return c.fn / denom if denom else 0.0


def point_adjust(pred: np.ndarray, true: np.ndarray) -> np.ndarray:
    """Event-level relabeling: a hit anywhere in a true anomalous segment
    marks the whole segment detected. Off by default everywhere."""
    pred = np.asarray(pred).astype(bool).copy()
    true = np.asarray(true).astype(bool)
    if pred.shape != true.shape:
        raise LengthMismatch(f"{pred.shape} vs {true.shape}")
    i = 0
    n = len(true)
    while i < n:
        if true[i]:
            j = i
            while j < n and true[j]:
                j += 1
            if pred[i:j].any():
                pred[i:j] = True
            i = j
        else:
            i += 1
    return pred.astype(np.int64)


# ---------------------------------------------------------------------------
# nonparametric statistics


@dataclass(frozen=True)
class MethodScoreTable:
    methods: list[str]
    datasets: list[str]
    values: np.ndarray  # (n_methods, n_datasets)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (len(self.methods), len(self.datasets)):
            raise InvalidConfig("table shape does not match method/dataset names")
        object.__setattr__(self, "values", v)

    def subset(self, methods: list[str]) -> "MethodScoreTable":
        idx = [self.methods.index(m) for m in methods]
        return MethodScoreTable(list(methods), list(self.datasets), self.values[idx])


def _friedman_ranks(values: np.ndarray) -> np.ndarray:
    """Within-dataset ranks (1 = best score), average ranks on ties."""
    ranks = np.empty_like(values)
    for j in range(values.shape[1]):
        ranks[:, j] = sstats.rankdata(-values[:, j])
    return ranks


def friedman_test(table: MethodScoreTable) -> tuple[float, float]:
    """Friedman chi-square over methods ranked within each dataset,
    with the standard tie correction; p from chi2 with k-1 dof."""
    k, n = table.values.shape
    if k < 3:
        raise TooFewMethods("Friedman test needs >= 3 methods")
    if n < 2:
        raise TooFewMethods("Friedman test needs >= 2 datasets")
    ranks = _friedman_ranks(table.values)
    rank_sums = ranks.sum(axis=1)
    ssbn = float(np.sum(rank_sums**2))
    stat = 12.0 / (n * k * (k + 1)) * ssbn - 3 * n * (k + 1)
    # tie correction (matches the classical correction factor)
    ties = 0.0
    for j in range(n):
        _, counts = np.unique(table.values[:, j], return_counts=True)
        ties += float(np.sum(counts**3 - counts))
    c = 1.0 - ties / (n * k * (k**2 - 1))
    if c > 0:
        stat /= c
    else:
        stat = 0.0  # every column fully tied
    p = float(sstats.chi2.sf(stat, k - 1)) if stat > 0 else 1.0
    return stat, p


def dunn_posthoc(table: MethodScoreTable, control: str,
                 adjust: str | None = None) -> dict[str, float]:
    """Dunn z-tests of each method against ``control`` using Friedman
    rank sums; two-sided normal p-values, unadjusted by default
    (``adjust='bonferroni'`` or ``'holm'`` available)."""
    k, n = table.values.shape
    if k < 3 or n < 2:
        raise TooFewMethods("Dunn post-hoc needs >= 3 methods, >= 2 datasets")
    if control not in table.methods:
        raise UnknownControl(f"control {control!r} not in table")
    mean_ranks = _friedman_ranks(table.values).mean(axis=1)
    se = np.sqrt(k * (k + 1) / (6.0 * n))
    ctrl = mean_ranks[table.methods.index(control)]
    out = {}
    for i, name in enumerate(table.methods):
        if name == control:
            continue
        z = (mean_ranks[i] - ctrl) / se
        out[name] = float(2 * sstats.norm.sf(abs(z)))
    if adjust == "bonferroni":
        m = len(out)
        out = {name: min(1.0, p * m) for name, p in out.items()}
    elif adjust == "holm":
        items = sorted(out.items(), key=lambda kv: kv[1])
        m = len(items)
        running = 0.0
        adj = {}
        for rank, (name, p) in enumerate(items):
            running = max(running, min(1.0, (m - rank) * p))
            adj[name] = running
        out = adj
    elif adjust is not None:
        raise InvalidConfig(f"unknown adjustment {adjust!r}")
    return out


def load_score_table(path) -> MethodScoreTable:
    """CSV with first column = method name, remaining columns = datasets."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 2:
            raise MalformedFile(f"{path}: need a method column plus datasets")
        datasets = [h.strip() for h in header[1:]]
        methods, rows = [], []
        for row in reader:
            methods.append(row[0].strip())
            rows.append([float(v) for v in row[1:]])
    return MethodScoreTable(methods, datasets, np.array(rows))


# ---------------------------------------------------------------------------
# z-score baseline


def zscore_baseline(vitals: VitalSeries, window: int = 6) -> ScoreSeries:
    """Trailing rolling z-score, max over variables.

    Sanity oracle: a trained model must beat this on synthetic data.
    """
    x = vitals.values()
    t, n = x.shape
    if t < window:
        raise SeriesTooShort(f"series length {t} < rolling window {window}")
    z = np.zeros((t, n))
    for i in range(t):
        lo = max(0, i - window + 1)
        seg = x[lo:i + 1]
        mean = seg.mean(axis=0)
        std = np.maximum(seg.std(axis=0), 1e-8)
        z[i] = np.abs(x[i] - mean) / std
    return ScoreSeries(z.max(axis=1), z, vitals.times())


# ---------------------------------------------------------------------------
# end-to-end pipeline + ablation


@dataclass
class PipelineResult:
    labels: np.ndarray
    truth: np.ndarray
    counts: ConfusionCounts
    f1: float
    model: ReconstructionTransformer
    calib_scores: ScoreSeries


def train_detect_pipeline(vitals: VitalSeries, point_labels: np.ndarray,
                          model_config: ModelConfig, train_config: TrainConfig,
                          spec: ThresholdSpec = ThresholdSpec()) -> PipelineResult:
    """Train on the anomaly-free prefix, calibrate thresholds on its held-out
    tail, then score and label the full series."""
    import torch

    k = model_config.window_len
    windows = make_windows(vitals, k, labels=point_labels)

    first_dirty = int(np.argmax(windows.labels)) if windows.labels.any() \
        else windows.num_windows
    if first_dirty < 2:
        raise EmptyCalibration("no anomaly-free prefix to train on")
    clean = WindowBatch(windows.windows[:first_dirty],
                        windows.labels[:first_dirty],
                        windows.t0, windows.step_s)

    train_split, _ = split_train_val(clean, train_config.split_fraction)
    _, stats = normalize(train_split)

    clean_norm, _ = normalize(clean, stats)
    torch.manual_seed(model_config.seed)
    model = ReconstructionTransformer(model_config)
    model, _ = train(clean_norm, train_config, model)

    _, val_norm = split_train_val(clean_norm, train_config.split_fraction)
    calib = score(model, val_norm)

    full_norm, _ = normalize(windows, stats)
    result = threshold(score(model, full_norm), calib, spec)

    counts = confusion(result.labels, point_labels)
    return PipelineResult(result.labels, np.asarray(point_labels), counts,
                          f1(counts), model, calib)


@dataclass(frozen=True)
class AblationRow:
    interval_s: float
    f1: float
    drop_pct: float


@dataclass
class AblationReport:
    rows: list[AblationRow] = field(default_factory=list)


def ablate_sampling(signal: RawSignal, truth: BeatTruth,
                    intervals: list[float], model_config: ModelConfig,
                    train_config: TrainConfig,
                    spec: ThresholdSpec = ThresholdSpec(),
                    lookback_s: float = 60.0) -> AblationReport:
    """F1 of a freshly trained model per vitals sampling interval.

    Intervals must be increasing; the drop is relative to the first
    (finest) interval.
    """
    if sorted(intervals) != list(intervals) or len(set(intervals)) != len(intervals):
        raise InvalidConfig("intervals must be strictly increasing")
    beats = detect_beats(signal)
    f1s = []
    for step in intervals:
        vitals = compute_vitals(beats, step_s=step, lookback_s=lookback_s)
        labels = stress_point_labels(vitals, truth)
        res = train_detect_pipeline(vitals, labels, model_config,
                                    train_config, spec)
        f1s.append(res.f1)
    base = f1s[0]
    rows = [
        AblationRow(interval, value,
                    0.0 if base == 0 else 100.0 * (value - base) / base)
        for interval, value in zip(intervals, f1s)
    ]
    return AblationReport(rows)


def save_ablation(report: AblationReport, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["interval_s", "f1", "drop_pct"])
        for row in report.rows:
            w.writerow([f"{row.interval_s:.9g}", f"{row.f1:.6f}",
                        f"{row.drop_pct:.3f}"])
