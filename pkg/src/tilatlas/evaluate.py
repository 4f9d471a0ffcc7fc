"""Patch-level evaluation: confusion counts, metric suite, sweeps, AUC.

All ratios carry an explicit undefined state (None) for empty denominators
instead of NaN, so downstream JSON and averaging stay well defined.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import GeometryMismatchError, UndefinedEstimateError
from .gridmap import (
    NEGATIVE,
    POSITIVE,
    UNCOVERED,
    LabelMap,
    ProbabilityMap,
    TissueMask,
    threshold,
)

# Confusion outcome colors, one pixel per patch.
TP_COLOR = (0, 255, 0)
FN_COLOR = (255, 0, 0)
FP_COLOR = (255, 255, 0)
TN_COLOR = (0, 0, 255)
UNEVALUATED_COLOR = (255, 255, 255)

SWEEP_THRESHOLDS = tuple(float(t) for t in np.linspace(0.0, 1.0, 101))


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        for name in ("tp", "fp", "tn", "fn"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def _ratio(num: int, den: int) -> Optional[float]:
    return None if den == 0 else num / den


@dataclass(frozen=True)
class MetricsReport:
    f1: Optional[float]
    ppv: Optional[float]
    npv: Optional[float]
    tpr: Optional[float]
    tnr: Optional[float]
    fpr: Optional[float]
    fnr: Optional[float]
    accuracy: Optional[float]

    def to_json_dict(self) -> dict:
        return {
            "f1": self.f1, "ppv": self.ppv, "npv": self.npv,
            "tpr": self.tpr, "tnr": self.tnr, "fpr": self.fpr,
            "fnr": self.fnr, "accuracy": self.accuracy,
        }


def metrics(c: ConfusionCounts) -> MetricsReport:
    ppv = _ratio(c.tp, c.tp + c.fp)
    npv = _ratio(c.tn, c.tn + c.fn)
    tpr = _ratio(c.tp, c.tp + c.fn)
    tnr = _ratio(c.tn, c.tn + c.fp)
    fpr = _ratio(c.fp, c.fp + c.tn)
    fnr = _ratio(c.fn, c.fn + c.tp)
    accuracy = _ratio(c.tp + c.tn, c.total)
    if ppv is None or tpr is None or ppv + tpr == 0:
        f1 = None
    else:
        f1 = 2.0 * ppv * tpr / (ppv + tpr)
    return MetricsReport(f1, ppv, npv, tpr, tnr, fpr, fnr, accuracy)


def confusion(pred: LabelMap, truth: LabelMap,
              eval_mask: Optional[TissueMask] = None) -> ConfusionCounts:
    """Counts over the evaluation region; uncovered predictions count negative."""
    if pred.geometry != truth.geometry:
        raise GeometryMismatchError(pred.geometry, truth.geometry, "confusion")
    if eval_mask is not None:
        if eval_mask.geometry != pred.geometry:
            raise GeometryMismatchError(pred.geometry, eval_mask.geometry, "confusion")
        region = eval_mask.tissue
    else:
        region = np.ones(pred.geometry.shape, dtype=bool)
    if (truth.labels[region] == UNCOVERED).any():
        raise ValueError("truth map has uncovered cells inside the evaluation region")
    pred_pos = (pred.labels == POSITIVE) & region
    pred_neg = ~pred_pos & region  # negative or uncovered prediction
    truth_pos = (truth.labels == POSITIVE) & region
    truth_neg = (truth.labels == NEGATIVE) & region
    return ConfusionCounts(
        tp=int((pred_pos & truth_pos).sum()),
        fp=int((pred_pos & truth_neg).sum()),
        tn=int((pred_neg & truth_neg).sum()),
        fn=int((pred_neg & truth_pos).sum()),
    )


@dataclass(frozen=True)
class SweepResult:
    thresholds: tuple[float, ...]
    mean_f1: tuple[Optional[float], ...]
    std_f1: tuple[Optional[float], ...]
    n_defined: tuple[int, ...]
    best_threshold: float
    best_reports: tuple[MetricsReport, ...]

    def __post_init__(self):
        if len(self.thresholds) != 101:
            raise ValueError("sweep must cover 101 thresholds")


def threshold_sweep(
    pairs: Sequence[tuple[ProbabilityMap, LabelMap]],
    eval_masks: Optional[Sequence[Optional[TissueMask]]] = None,
) -> SweepResult:
    """Label every map at each of the 101 thresholds and average per-image F1.

    Undefined F1 values are excluded from the mean and counted. The best
    threshold attains the maximum mean F1; ties go to the lowest threshold.
    """
    if not pairs:
        raise ValueError("threshold_sweep needs at least one (map, truth) pair")
    if eval_masks is None:
        eval_masks = [None] * len(pairs)

    means: list[Optional[float]] = []
    stds: list[Optional[float]] = []
    counts: list[int] = []
    per_threshold_reports: list[list[MetricsReport]] = []
    for t in SWEEP_THRESHOLDS:
        reports = [
            metrics(confusion(threshold(pmap, t), truth, mask))
            for (pmap, truth), mask in zip(pairs, eval_masks)
        ]
        per_threshold_reports.append(reports)
        defined = [r.f1 for r in reports if r.f1 is not None]
        counts.append(len(defined))
        if defined:
            means.append(float(np.mean(defined)))
            stds.append(float(np.std(defined)))
        else:
            means.append(None)
            stds.append(None)

    best_idx = None
    for idx, m in enumerate(means):
        if m is None:
            continue
        if best_idx is None or m > means[best_idx]:
            best_idx = idx
    if best_idx is None:
        raise UndefinedEstimateError("F1 undefined at every threshold")
    return SweepResult(
        thresholds=SWEEP_THRESHOLDS,
        mean_f1=tuple(means),
        std_f1=tuple(stds),
        n_defined=tuple(counts),
        best_threshold=SWEEP_THRESHOLDS[best_idx],
        best_reports=tuple(per_threshold_reports[best_idx]),
    )


def sweep_to_csv(result: SweepResult) -> str:
    buf = io.StringIO()
    buf.write("threshold,mean_f1,std_f1,n_defined\n")
    for t, m, s, n in zip(result.thresholds, result.mean_f1,
                          result.std_f1, result.n_defined):
        m_s = "" if m is None else f"{m:.6f}"
        s_s = "" if s is None else f"{s:.6f}"
        buf.write(f"{t:.2f},{m_s},{s_s},{n}\n")
    return buf.getvalue()


def auc(scores: Sequence[float], labels: Sequence[bool]) -> float:
    """Rank-based Mann-Whitney AUC: P(score+ > score-) + 0.5 P(tie)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length 1-D sequences")
    n_pos = int(labels.sum())
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise UndefinedEstimateError("AUC needs both a positive and a negative")
    ranks = rankdata(scores)
    pos_rank_sum = ranks[labels].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def render_confusion(pred: LabelMap, truth: LabelMap,
                     eval_mask: Optional[TissueMask] = None) -> np.ndarray:
    """RGB outcome raster at one pixel per patch; counts match confusion()."""
    if pred.geometry != truth.geometry:
        raise GeometryMismatchError(pred.geometry, truth.geometry, "render_confusion")
    if eval_mask is not None and eval_mask.geometry != pred.geometry:
        raise GeometryMismatchError(pred.geometry, eval_mask.geometry, "render_confusion")
    region = eval_mask.tissue if eval_mask is not None else np.ones(pred.geometry.shape, bool)
    evaluated = region & (truth.labels != UNCOVERED)
    pred_pos = pred.labels == POSITIVE
    truth_pos = truth.labels == POSITIVE
    out = np.empty(pred.geometry.shape + (3,), dtype=np.uint8)
    out[:] = UNEVALUATED_COLOR
    out[evaluated & pred_pos & truth_pos] = TP_COLOR
    out[evaluated & ~pred_pos & truth_pos] = FN_COLOR
    out[evaluated & pred_pos & ~truth_pos] = FP_COLOR
    out[evaluated & ~pred_pos & ~truth_pos] = TN_COLOR
    return out
