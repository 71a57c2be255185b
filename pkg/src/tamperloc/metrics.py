"""Localization and detection metrics.

Pixel metrics binarize predictions at a fixed 0.5 threshold. AUC is the
Mann-Whitney statistic with midranks for ties.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import InputError, UndefinedMetric

THRESHOLD = 0.5
PIXEL_KEYS = ("pixel_f1", "pixel_iou", "pixel_auc")
AVG_KEYS = (*PIXEL_KEYS, "image_f1", "image_acc")


def binarize(pred, threshold: float = THRESHOLD) -> np.ndarray:
    return np.asarray(pred) >= threshold


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred).astype(bool)
    g = np.asarray(gt).astype(bool)
    if p.shape != g.shape:
        raise InputError(f"prediction {p.shape} and ground truth {g.shape} differ")
    return p, g


def pixel_f1(pred, gt) -> float:
    """``2TP / (2TP + FP + FN)`` on binary masks; 0 when both are empty."""
    p, g = _pair(pred, gt)
    tp = np.count_nonzero(p & g)
    fp = np.count_nonzero(p & ~g)
    fn = np.count_nonzero(~p & g)
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def mask_iou(pred, gt) -> float:
    p, g = _pair(pred, gt)
    union = np.count_nonzero(p | g)
    return np.count_nonzero(p & g) / union if union else 0.0


def pixel_auc(scores, gt) -> float:
    s = np.asarray(scores, dtype=np.float64).ravel()
    g = np.asarray(gt).astype(bool).ravel()
    if s.shape != g.shape:
        raise InputError(f"scores {s.shape} and ground truth {g.shape} differ")
    n_pos = np.count_nonzero(g)
    n_neg = g.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetric("AUC needs both classes in the ground truth")
    ranks = rankdata(s)
    return float((ranks[g].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def image_level_metrics(logits, labels) -> tuple[float, float]:
    """Accuracy and manipulated-class F1 from ``N x 2`` logits."""
    logits = np.asarray(logits, dtype=np.float64).reshape(-1, 2)
    y = np.asarray(labels).astype(int).ravel()
    if len(y) == 0 or len(y) != len(logits):
        raise InputError("need one label per logit row and at least one sample")
    pred = logits.argmax(axis=1)
    acc = float(np.mean(pred == y))
    tp = np.count_nonzero((pred == 1) & (y == 1))
    fp = np.count_nonzero((pred == 1) & (y == 0))
    fn = np.count_nonzero((pred == 0) & (y == 1))
    denom = 2 * tp + fp + fn
    return acc, (2 * tp / denom if denom else 0.0)


@dataclass
class MetricsReport:
    rows: list[dict] = field(default_factory=list)
    avg: dict[str, float | None] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def _mean(values) -> float | None:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def build_report(
    rows: list[dict], include_authentic_pixels: bool = False, meta: dict | None = None
) -> MetricsReport:
    """Aggregate per-sample rows.

    Each row carries ``label``, ``logits`` and the per-sample pixel metrics
    (``pixel_auc`` may be None when undefined). Pixel averages cover
    manipulated samples unless ``include_authentic_pixels``.
    """
    if not rows:
        raise InputError("cannot build a report from zero samples")
    pix_rows = [r for r in rows if include_authentic_pixels or r["label"] == 1]
    acc, f1 = image_level_metrics([r["logits"] for r in rows], [r["label"] for r in rows])
    avg = {k: _mean(r[k] for r in pix_rows) for k in PIXEL_KEYS}
    avg.update(image_f1=f1, image_acc=acc)
    meta = dict(meta or {})
    meta.update(include_authentic_pixels=include_authentic_pixels, threshold=THRESHOLD, n_samples=len(rows),
                n_pixel_samples=len(pix_rows))
    return MetricsReport(rows, avg, meta)
