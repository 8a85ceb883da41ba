"""Background (RE, PSNR) and foreground (precision, recall, F-measure) scores."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .video_io import VideoMatrix, load_frames


def relative_error(estimate, truth) -> float:
    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimate.shape != truth.shape:
        raise ValueError(f"shape mismatch: {estimate.shape} vs {truth.shape}")
    den = np.linalg.norm(truth)
    if den == 0:
        raise ValueError("relative error undefined for an all-zero truth")
    return float(np.linalg.norm(truth - estimate) / den)


def psnr(estimate, truth) -> float:
    """20 log10(1 / RMSE) with peak intensity 1; ``math.inf`` for identical images."""
    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimate.shape != truth.shape:
        raise ValueError(f"shape mismatch: {estimate.shape} vs {truth.shape}")
    rmse = np.linalg.norm(estimate - truth) / math.sqrt(truth.size)
    if rmse == 0:
        return math.inf
    return float(20.0 * math.log10(1.0 / rmse))


def threshold_mask(S, theta: float) -> np.ndarray:
    """Boolean (m, n1, n2) masks, true where |S| > theta."""
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    if isinstance(S, VideoMatrix):
        return np.moveaxis(np.abs(S.cube()) > theta, 2, 0)
    return np.abs(np.asarray(S)) > theta


@dataclass(frozen=True)
class DetectionScores:
    precision: float
    recall: float
    f_measure: float
    tp: int
    fp: int
    fn: int
    # names of metrics whose denominator was zero and were reported as 0
    degenerate: tuple[str, ...] = field(default=())


def _ratio(num: float, den: float, name: str, flags: list[str]) -> float:
    if den == 0:
        flags.append(name)
        return 0.0
    return num / den


def _scores(tp: int, fp: int, fn: int) -> DetectionScores:
    flags: list[str] = []
    pr = _ratio(tp, tp + fp, "precision", flags)
    re = _ratio(tp, tp + fn, "recall", flags)
    fm = _ratio(2 * pr * re, pr + re, "f_measure", flags)
    return DetectionScores(pr, re, fm, tp, fp, fn, tuple(flags))


def detection_metrics(predicted, truth, per_frame: bool = False) -> DetectionScores:
    """Precision/recall/F-measure of boolean masks.

    Counts are pooled over all frames by default. With ``per_frame`` each
    frame is scored separately (axis 0) and the three metrics are averaged;
    the returned counts stay pooled.
    """
    predicted = np.asarray(predicted, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if predicted.shape != truth.shape:
        raise ValueError(f"mask shape mismatch: {predicted.shape} vs {truth.shape}")
    tp = int(np.count_nonzero(predicted & truth))
    fp = int(np.count_nonzero(predicted & ~truth))
    fn = int(np.count_nonzero(~predicted & truth))
    if not per_frame:
        return _scores(tp, fp, fn)
    frames = [
        _scores(
            int(np.count_nonzero(p & t)),
            int(np.count_nonzero(p & ~t)),
            int(np.count_nonzero(~p & t)),
        )
        for p, t in zip(predicted, truth)
    ]
    flags = sorted({f for s in frames for f in s.degenerate})
    return DetectionScores(
        float(np.mean([s.precision for s in frames])),
        float(np.mean([s.recall for s in frames])),
        float(np.mean([s.f_measure for s in frames])),
        tp, fp, fn, tuple(flags),
    )


@dataclass(frozen=True)
class MetricsReport:
    re: float = math.nan
    psnr: float = math.nan
    precision: float = math.nan
    recall: float = math.nan
    f_measure: float = math.nan

    COLUMNS = ("re", "psnr", "precision", "recall", "f_measure")

    def csv_row(self) -> str:
        return ",".join(_fmt(getattr(self, c)) for c in self.COLUMNS)

    def to_csv(self) -> str:
        return ",".join(self.COLUMNS) + "\n" + self.csv_row() + "\n"


def _fmt(x: float) -> str:
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return "nan"
    return f"{x:.6g}"


def load_masks(directory: str | Path, pattern: str = "*.pgm") -> np.ndarray:
    """Ground-truth masks from PGM files; intensity > 127 means foreground."""
    seq = load_frames(directory, pattern)
    return seq.frames * 255.0 > 127.0
