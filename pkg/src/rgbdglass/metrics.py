"""Binary segmentation metrics: IoU, F-beta, MAE and balanced error rate."""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError

BETA_SQ = 0.3


@dataclass
class Counts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def n_p(self):
        return self.tp + self.fn

    @property
    def n_n(self):
        return self.tn + self.fp

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn


@dataclass
class MetricReport:
    iou: float
    f_beta: float
    mae: float
    ber: float
    counts: Counts = None
    n_images: int = 1

    def line(self):
        return format_report(self)


def format_report(r):
    return f"iou={r.iou:.4f} fbeta={r.f_beta:.4f} mae={r.mae:.4f} ber={r.ber:.2f}"


def _pair(pred, gt):
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    return pred, gt


def confusion(pred_bin, gt):
    p, g = _pair(pred_bin, gt)
    p, g = p.astype(bool), g.astype(bool)
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return Counts(tp, fp, fn, p.size - tp - fp - fn)


def mae(pred_prob, gt):
    """Mean absolute error; the sum is correctly rounded, so it does not depend on summation order."""
    p, g = _pair(pred_prob, gt)
    diff = np.abs(p.astype(np.float64) - g.astype(np.float64))
    return math.fsum(diff.ravel()) / diff.size


def precision_recall(c):
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    recall = c.tp / c.n_p if c.n_p else 0.0
    return precision, recall


def f_beta(pred_bin, gt, beta_sq=BETA_SQ):
    """(1 + b2) P R / (b2 P + R); 0 when the denominator vanishes."""
    return _f_beta_counts(confusion(pred_bin, gt), beta_sq)


def _f_beta_counts(c, beta_sq=BETA_SQ):
    p, r = precision_recall(c)
    den = beta_sq * p + r
    return (1 + beta_sq) * p * r / den if den > 0 else 0.0


def iou(pred_bin, gt):
    """tp / (tp + fp + fn); 1 when both masks are empty."""
    return _iou_counts(confusion(pred_bin, gt))


def _iou_counts(c):
    den = c.tp + c.fp + c.fn
    return c.tp / den if den else 1.0


def ber(pred_bin, gt):
    """Balanced error rate in percent. A rate over an empty class counts as 1."""
    return _ber_counts(confusion(pred_bin, gt))


def _ber_counts(c):
    tpr = c.tp / c.n_p if c.n_p else 1.0
    tnr = c.tn / c.n_n if c.n_n else 1.0
    return 100.0 * (1 - 0.5 * (tpr + tnr))


def evaluate_image(pred_prob, gt, threshold=0.5):
    p, g = _pair(pred_prob, gt)
    c = confusion(p >= threshold, g)
    return MetricReport(_iou_counts(c), _f_beta_counts(c), mae(p, g), _ber_counts(c), c, 1)


def evaluate_set(preds, gts, threshold=0.5):
    """Per-image metrics (MAE on probabilities, the rest on maps binarized at threshold), then averaged."""
    preds, gts = list(preds), list(gts)
    if len(preds) != len(gts):
        raise DimensionError(f"{len(preds)} predictions for {len(gts)} ground truths")
    if not preds:
        raise DimensionError("evaluate_set needs at least one image")
    reports = [evaluate_image(p, g, threshold) for p, g in zip(preds, gts)]
    total = Counts(0, 0, 0, 0)
    for r in reports:
        total = Counts(total.tp + r.counts.tp, total.fp + r.counts.fp, total.fn + r.counts.fn, total.tn + r.counts.tn)
    return MetricReport(
        iou=float(np.mean([r.iou for r in reports])),
        f_beta=float(np.mean([r.f_beta for r in reports])),
        mae=float(np.mean([r.mae for r in reports])),
        ber=float(np.mean([r.ber for r in reports])),
        counts=total,
        n_images=len(reports),
    )
