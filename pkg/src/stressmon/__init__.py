"""Stress monitoring from wearable vitals via reconstruction-based
anomaly detection."""

from importlib import resources

from .signalio import (
    BeatTruth,
    GeneratorConfig,
    RawSignal,
    SignalKind,
    generate_synthetic,
    load_signal,
    resample,
)
from .vitals import (
    BeatSeries,
    NormStats,
    VitalSeries,
    WindowBatch,
    compute_vitals,
    detect_beats,
    make_windows,
    normalize,
)
from .model import ModelConfig, ReconstructionTransformer, dylinear
from .checkpoint import load_checkpoint, save_checkpoint
from .training import TrainConfig, TrainMode, TrainReport, reconstruction_loss, train
from .detection import (
    DetectionResult,
    ScoreSeries,
    ThresholdSpec,
    contributions,
    detect,
    percentile,
    score,
    threshold,
)
from .evaluation import (
    ConfusionCounts,
    MethodScoreTable,
    ablate_sampling,
    confusion,
    dunn_posthoc,
    f1,
    fnr,
    fpr,
    friedman_test,
    zscore_baseline,
)

__version__ = "0.1.0"


def bundled_score_table():
    """Published F1 comparison table shipped as a fixture."""
    from .evaluation import load_score_table

    path = resources.files("stressmon.data") / "method_f1_scores.csv"
    with resources.as_file(path) as p:
        return load_score_table(p)
