"""Training objective: detection cross-entropy + weighted mask BCE and Dice.

Mask terms are computed per sample and skipped for authentic samples
(empty ground truth).
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ContractError, InputError

BCE_EPS = 1e-7
DICE_SMOOTH = 1.0


@dataclass(frozen=True)
class LossWeights:
    lambda_bce: float = 1.0
    lambda_dice: float = 1.0

    def __post_init__(self):
        if self.lambda_bce < 0 or self.lambda_dice < 0:
            raise InputError("loss weights must be nonnegative")


@dataclass
class LossBreakdown:
    det: torch.Tensor
    bce: torch.Tensor
    dice: torch.Tensor
    total: torch.Tensor

    def as_floats(self) -> dict[str, float]:
        return {k: float(getattr(self, k).detach()) for k in ("det", "bce", "dice", "total")}


def _labels(label, device) -> torch.Tensor:
    y = torch.as_tensor(label, device=device).long().reshape(-1)
    if not torch.all((y == 0) | (y == 1)):
        raise InputError(f"labels must be 0 (authentic) or 1 (manipulated), got {y.tolist()}")
    return y


def detection_loss(logits: torch.Tensor, label) -> torch.Tensor:
    """Per-sample softmax cross-entropy; ``logits`` is ``2`` or ``B x 2``."""
    logits = logits.reshape(-1, 2)
    return F.cross_entropy(logits, _labels(label, logits.device), reduction="none")


def _match(pred: torch.Tensor, gt: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    gt = torch.as_tensor(gt, dtype=pred.dtype, device=pred.device)
    if pred.shape != gt.shape:
        raise ContractError(f"prediction {tuple(pred.shape)} and ground truth {tuple(gt.shape)} differ")
    if pred.ndim == 2:
        pred, gt = pred.unsqueeze(0), gt.unsqueeze(0)
    return pred.flatten(1), gt.flatten(1)


def mask_bce(pred: torch.Tensor, gt, eps: float = BCE_EPS) -> torch.Tensor:
    """Per-sample mean binary cross-entropy on probabilities clipped to ``[eps, 1 - eps]``."""
    p, g = _match(pred, gt)
    p = p.clamp(eps, 1 - eps)
    return -(g * torch.log(p) + (1 - g) * torch.log1p(-p)).mean(dim=1)


def mask_dice(pred: torch.Tensor, gt, smooth: float = DICE_SMOOTH) -> torch.Tensor:
    p, g = _match(pred, gt)
    return 1 - (2 * (p * g).sum(dim=1) + smooth) / (p.sum(dim=1) + g.sum(dim=1) + smooth)


def composite_loss(det, bce, dice, weights: LossWeights = LossWeights(), manipulated=None) -> LossBreakdown:
    """``det + lambda_bce * bce + lambda_dice * dice``, averaged over the batch.

    Where ``manipulated`` is given, mask terms of authentic samples are zeroed.
    """
    det, bce, dice = (t if torch.is_tensor(t) else torch.as_tensor(t, dtype=torch.float64) for t in (det, bce, dice))
    if manipulated is not None:
        m = torch.as_tensor(manipulated, dtype=bce.dtype, device=bce.device).reshape(bce.shape)
        bce = bce * m
        dice = dice * m
    total = det + weights.lambda_bce * bce + weights.lambda_dice * dice
    return LossBreakdown(det.mean(), bce.mean(), dice.mean(), total.mean())


def pipeline_loss(logits: torch.Tensor, probs: torch.Tensor, labels, masks, weights: LossWeights = LossWeights()) -> LossBreakdown:
    labels = _labels(labels, logits.device)
    return composite_loss(
        detection_loss(logits, labels),
        mask_bce(probs, masks),
        mask_dice(probs, masks),
        weights,
        manipulated=labels,
    )
