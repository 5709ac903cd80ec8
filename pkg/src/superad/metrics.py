"""ROC / AUC evaluation, threshold-axis areas, SNPR, and separability stats.

Scores are min-max normalised so every detector shares the threshold
domain [0, 1]; a constant map normalises to all zeros. Curves use the
predict-anomaly-iff-score >= tau rule at each distinct score, plus a
leading empty-detection point, which makes the trapezoidal area equal the
Mann-Whitney pair statistic (ties counted half).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .io import AnomalyMap, GroundTruth

__all__ = [
    "RocCurve",
    "MetricsReport",
    "roc_curve",
    "auc",
    "threshold_areas",
    "snpr",
    "separability",
    "evaluate",
]


@dataclass
class RocCurve:
    """Detection / false-alarm rates at descending thresholds over [0, 1]."""

    thresholds: np.ndarray
    pd: np.ndarray
    pf: np.ndarray

    def __post_init__(self):
        self.thresholds = np.asarray(self.thresholds, dtype=np.float64)
        self.pd = np.asarray(self.pd, dtype=np.float64)
        self.pf = np.asarray(self.pf, dtype=np.float64)
        if not (len(self.thresholds) == len(self.pd) == len(self.pf)):
            raise ValueError("thresholds, pd and pf must have equal length")
        if np.any(np.diff(self.thresholds) > 0):
            raise ValueError("thresholds must be non-increasing")
        if np.any(np.diff(self.pd) < 0) or np.any(np.diff(self.pf) < 0):
            raise ValueError("pd and pf must be non-decreasing as tau decreases")


@dataclass
class MetricsReport:
    """One detector's evaluation summary."""

    auc: float
    a_pd_tau: float
    a_pf_tau: float
    snpr_db: float
    separability: dict

    def to_dict(self) -> dict:
        return {
            "auc": self.auc,
            "a_pd_tau": self.a_pd_tau,
            "a_pf_tau": self.a_pf_tau,
            "snpr_db": self.snpr_db,
            "separability": self.separability,
        }


def _normalized_scores(amap: AnomalyMap) -> np.ndarray:
    s = amap.scores.reshape(-1)
    span = s.max() - s.min()
    if span == 0:
        return np.zeros_like(s)
    return (s - s.min()) / span


def _split_classes(amap: AnomalyMap, gt: GroundTruth) -> tuple[np.ndarray, np.ndarray]:
    if (amap.height, amap.width) != (gt.height, gt.width):
        raise ValueError(
            f"map {amap.scores.shape} and ground truth {gt.mask.shape} dimensions differ"
        )
    mask = gt.mask.reshape(-1)
    if mask.all() or not mask.any():
        raise ValueError("single-class ground truth: need at least one pixel of each class")
    scores = _normalized_scores(amap)
    return scores[mask], scores[~mask]


def roc_curve(amap: AnomalyMap, gt: GroundTruth) -> RocCurve:
    """Curve over tau in [0, 1]: thresholds are the distinct normalised
    scores (descending) bracketed by 1 and 0; a pixel is predicted
    anomalous when its score >= tau. The first point is the
    empty-detection limit (0, 0), so the curve always spans (0,0)-(1,1).
    """
    pos, neg = _split_classes(amap, gt)
    pos_sorted = np.sort(pos)
    neg_sorted = np.sort(neg)

    uniq = np.unique(np.concatenate([pos, neg]))[::-1]
    taus = [1.0]
    pd = [0.0]
    pf = [0.0]
    for tau in uniq:
        p = 1.0 - np.searchsorted(pos_sorted, tau, side="left") / pos.size
        f = 1.0 - np.searchsorted(neg_sorted, tau, side="left") / neg.size
        if not (taus[-1] == tau and pd[-1] == p and pf[-1] == f):
            taus.append(float(tau))
            pd.append(float(p))
            pf.append(float(f))
    if taus[-1] != 0.0:
        taus.append(0.0)
        pd.append(1.0)
        pf.append(1.0)
    return RocCurve(np.array(taus), np.array(pd), np.array(pf))


def auc(curve: RocCurve) -> float:
    """Trapezoidal area under the (pf, pd) curve; equals the probability a
    random anomaly outscores a random background pixel (ties half)."""
    return float(np.trapezoid(curve.pd, curve.pf))


def threshold_areas(amap: AnomalyMap, gt: GroundTruth) -> tuple[float, float]:
    """Trapezoidal areas under pd(tau) and pf(tau) for tau in [0, 1]."""
    curve = roc_curve(amap, gt)
    a_pd = float(-np.trapezoid(curve.pd, curve.thresholds))
    a_pf = float(-np.trapezoid(curve.pf, curve.thresholds))
    return a_pd, a_pf


def snpr(a_pd_tau: float, a_pf_tau: float) -> float:
    """Signal-to-noise probability ratio, 10*log10(a_pd / a_pf), in dB.

    A zero false-alarm area with positive detection area reports +inf;
    both areas zero is undefined.
    """
    if a_pd_tau < 0 or a_pf_tau < 0:
        raise ValueError("threshold areas must be non-negative")
    if a_pf_tau == 0:
        if a_pd_tau == 0:
            raise ValueError("snpr undefined: both threshold areas are zero")
        return math.inf
    return 10.0 * math.log10(a_pd_tau / a_pf_tau)


def _five_numbers(values: np.ndarray) -> dict:
    qs = np.quantile(values, [0.0, 0.25, 0.5, 0.75, 1.0], method="linear")
    return {
        "min": float(qs[0]),
        "q1": float(qs[1]),
        "median": float(qs[2]),
        "q3": float(qs[3]),
        "max": float(qs[4]),
    }


def separability(amap: AnomalyMap, gt: GroundTruth) -> dict:
    """Per-class five-number summaries of the normalised scores."""
    pos, neg = _split_classes(amap, gt)
    return {"anomaly": _five_numbers(pos), "background": _five_numbers(neg)}


def evaluate(amap: AnomalyMap, gt: GroundTruth) -> MetricsReport:
    """Full metrics bundle for one detector run."""
    curve = roc_curve(amap, gt)
    a_pd, a_pf = threshold_areas(amap, gt)
    return MetricsReport(
        auc=auc(curve),
        a_pd_tau=a_pd,
        a_pf_tau=a_pf,
        snpr_db=snpr(a_pd, a_pf),
        separability=separability(amap, gt),
    )
