"""Trojan decision layer: adjusted slack, thresholding, ROC analysis.

Score convention: an inserted Trojan only ever adds delay, which shortens
the measured slack. The per-path score is therefore the slack shortfall

    score = adjusted_slack - mean_measured_slack

and a path is flagged when the shortfall exceeds the detection threshold.
Ground-truth labels are consumed only to evaluate a finished report (rates,
ROC, reference thresholds), never by the classifier itself.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .errors import MissingModel, NegativeThreshold, SingleClass
from .watchdog import MlpModel


class DetectionMode(str, Enum):
    SSTA = "ssta"  # mean-shifted plain timing table, fixed threshold
    SGTM = "sgtm"  # mean-shifted path-specific-margin table, fixed threshold
    NGTM = "ngtm"  # path-specific table plus watchdog shift, 4-sigma threshold


@dataclass(frozen=True)
class PathObservation:
    """Everything the classifier may see about one path in one speed bin."""

    path_id: str
    gtm_slack_ps: float
    mean_measured_slack_ps: float
    features: np.ndarray | None = None
    fails_at_nominal: bool = False


@dataclass(frozen=True)
class PathVerdict:
    path_id: str
    score_ps: float
    threshold_ps: float
    flagged: bool
    bin_label: str


@dataclass(frozen=True)
class DetectionReport:
    mode: DetectionMode
    bin_label: str
    threshold_ps: float
    static_shift_ps: float
    verdicts: tuple[PathVerdict, ...]
    tpo: float | None = None
    fpo: float | None = None
    youden_threshold_ps: float | None = None
    youden_j: float | None = None

    @property
    def flagged_ids(self) -> set[str]:
        return {v.path_id for v in self.verdicts if v.flagged}


def adjusted_slack(gtm_slack_ps: float, shift_ps: float) -> float:
    """Timing-table slack corrected by the predicted process shift."""
    if not (np.isfinite(gtm_slack_ps) and np.isfinite(shift_ps)):
        raise ValueError("adjusted slack needs finite inputs")
    return gtm_slack_ps + shift_ps


def threshold_4sigma(sigma_nn_ps: float) -> float:
    """Detection threshold: four times the watchdog residual sd."""
    if sigma_nn_ps < 0:
        raise NegativeThreshold("sigma must be >= 0")
    return 4.0 * sigma_nn_ps


def detect(observations, mode: DetectionMode, threshold_ps: float, bin_label: str,
           model: MlpModel | None = None, static_shift_ps: float = 0.0) -> DetectionReport:
    """Classify every observed path in one speed bin.

    SSTA and SGTM shift the timing-table slack by the bin's static shift; the
    watchdog mode predicts a per-path shift from the design-time features.
    A path that failed at the nominal period on any die is flagged outright.
    """
    if threshold_ps < 0:
        raise NegativeThreshold(f"threshold {threshold_ps} ps")
    if mode == DetectionMode.NGTM and model is None:
        raise MissingModel("watchdog mode needs a trained model")

    obs = list(observations)
    if mode == DetectionMode.NGTM:
        # row-at-a-time so a score recomputed against predict() is bit-equal
        shifts = [model.predict(o.features) for o in obs]
    else:
        shifts = [static_shift_ps] * len(obs)

    verdicts = []
    for o, shift in zip(obs, shifts):
        if o.fails_at_nominal:
            verdicts.append(PathVerdict(o.path_id, float("inf"), threshold_ps,
                                        True, bin_label))
            continue
        score = adjusted_slack(o.gtm_slack_ps, float(shift)) - o.mean_measured_slack_ps
        verdicts.append(PathVerdict(o.path_id, float(score), threshold_ps,
                                    bool(score > threshold_ps), bin_label))
    return DetectionReport(mode=mode, bin_label=bin_label, threshold_ps=threshold_ps,
                           static_shift_ps=float(static_shift_ps),
                           verdicts=tuple(verdicts))


def roc_and_youden(scores, labels):
    """ROC swept over the distinct scores; the reference threshold maximizes
    TPR - FPR (smallest such threshold on ties).

    Returns (points, t_star, j_star) where points rows are
    (threshold, tpr, fpr) with a leading -inf row, and flagging means
    score > threshold.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be matching 1-d arrays")
    n_pos = int(labels.sum())
    n_neg = int(len(labels) - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("ROC needs both benign and Trojan examples")

    pos = np.sort(scores[labels])
    neg = np.sort(scores[~labels])
    thresholds = np.concatenate([[-np.inf], np.unique(scores)])
    # count of class scores strictly above each threshold
    tpr = (n_pos - np.searchsorted(pos, thresholds, side="right")) / n_pos
    fpr = (n_neg - np.searchsorted(neg, thresholds, side="right")) / n_neg
    j = tpr - fpr
    best = int(np.argmax(j))  # ascending thresholds: ties resolve low
    points = np.column_stack([thresholds, tpr, fpr])
    return points, float(thresholds[best]), float(j[best])


def metrics(report: DetectionReport, ground_truth: dict[str, bool]):
    """(TPo, FPo) percentages against ground truth covering every verdict.

    A side with no members reports None (rendered as N/A downstream).
    """
    missing = [v.path_id for v in report.verdicts if v.path_id not in ground_truth]
    if missing:
        raise ValueError(f"ground truth missing for {len(missing)} paths, "
                         f"first {missing[0]!r}")
    n_troj = n_clean = hit = false = 0
    for v in report.verdicts:
        if ground_truth[v.path_id]:
            n_troj += 1
            hit += int(v.flagged)
        else:
            n_clean += 1
            false += int(v.flagged)
    tpo = 100.0 * hit / n_troj if n_troj else None
    fpo = 100.0 * false / n_clean if n_clean else None
    return tpo, fpo


def evaluate_report(report: DetectionReport, ground_truth: dict[str, bool],
                    with_roc: bool = True) -> DetectionReport:
    """Attach TPo/FPo (and ROC reference threshold when both classes exist)."""
    tpo, fpo = metrics(report, ground_truth)
    t_star = j_star = None
    if with_roc and tpo is not None and fpo is not None:
        finite = [(v.score_ps, ground_truth[v.path_id]) for v in report.verdicts]
        scores = np.array([s for s, _ in finite])
        labels = np.array([l for _, l in finite], dtype=bool)
        try:
            _, t_star, j_star = roc_and_youden(scores, labels)
        except SingleClass:
            pass
    return replace(report, tpo=tpo, fpo=fpo,
                   youden_threshold_ps=t_star, youden_j=j_star)
