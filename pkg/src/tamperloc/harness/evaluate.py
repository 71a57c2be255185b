from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import torch

from ..datakit.synth import Sample
from ..errors import UndefinedMetric
from ..images import pad_to_multiple
from ..metrics import MetricsReport, binarize, build_report, mask_iou, pixel_auc, pixel_f1
from .model import ProposeRectifyNet

# image (H x W x 3) -> (logits of shape (2,), probability map H x W)
Detector = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]


def model_detector(model: ProposeRectifyNet) -> Detector:
    dtype = next(model.parameters()).dtype

    @torch.no_grad()
    def detect(image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = torch.as_tensor(np.ascontiguousarray(image.transpose(2, 0, 1)), dtype=dtype).unsqueeze(0)
        x, (h, w) = pad_to_multiple(x)
        was_training = model.training
        model.eval()
        out = model(x)
        model.train(was_training)
        probs = out.mask.probabilities[0, :h, :w]
        return out.logits[0].double().numpy(), probs.double().numpy()

    return detect


def score_sample(logits: np.ndarray, probs: np.ndarray, sample: Sample, index: int) -> dict:
    binary = binarize(probs)
    try:
        auc = pixel_auc(probs, sample.mask)
    except UndefinedMetric:
        auc = None
    return {
        "index": index,
        "image": sample.provenance.get("image_path", sample.provenance.get("generator")),
        "label": sample.y,
        "logits": [float(v) for v in logits],
        "pred_label": int(np.argmax(logits)),
        "pixel_f1": pixel_f1(binary, sample.mask),
        "pixel_iou": mask_iou(binary, sample.mask),
        "pixel_auc": auc,
    }


def evaluate_detector(
    detector: Detector, samples: Sequence[Sample], include_authentic_pixels: bool = False, meta: dict | None = None
) -> MetricsReport:
    rows = []
    for i, s in enumerate(samples):
        logits, probs = detector(s.image)
        rows.append(score_sample(np.asarray(logits), np.asarray(probs), s, i))
    return build_report(rows, include_authentic_pixels, meta)


def evaluate_model(model: ProposeRectifyNet, samples: Sequence[Sample], include_authentic_pixels: bool = False) -> MetricsReport:
    return evaluate_detector(model_detector(model), samples, include_authentic_pixels)


def evaluate(ckpt, manifest, include_authentic_pixels: bool = False) -> MetricsReport:
    """Evaluate a checkpoint (object or path) on a manifest (path or list of samples)."""
    from ..datakit.manifest import load_samples
    from .checkpoint import Checkpoint, load_checkpoint

    if not isinstance(ckpt, Checkpoint):
        ckpt = load_checkpoint(ckpt)
    samples = load_samples(manifest) if not isinstance(manifest, (list, tuple)) else manifest
    meta = {"step": ckpt.step}
    return evaluate_detector(model_detector(ckpt.build()), samples, include_authentic_pixels, meta)


def selection_score(report: MetricsReport) -> float:
    """Best-checkpoint criterion: mean of pixel F1 and image accuracy."""
    f1 = report.avg.get("pixel_f1")
    return ((f1 if f1 is not None else 0.0) + report.avg["image_acc"]) / 2
