"""Training loop: AdamW with linear warmup, Bayar projection after each step,
periodic validation, best checkpoint retained."""
from __future__ import annotations

import contextlib
import copy
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from ..datakit.manifest import load_samples
from ..datakit.synth import Sample
from ..errors import ConfigurationError, DataError, DivergenceError
from ..images import pad_to_multiple
from ..losses import pipeline_loss
from .checkpoint import Checkpoint, save_checkpoint
from .config import RunConfig
from .evaluate import evaluate_model, selection_score
from .model import DTYPES, ProposeRectifyNet, build_model

log = logging.getLogger(__name__)


def lr_at(update: int, cfg: RunConfig) -> float:
    """Learning rate for the ``update``-th optimizer step (1-based)."""
    if cfg.warmup_steps == 0:
        return cfg.optim.lr
    return cfg.optim.lr * min(1.0, update / cfg.warmup_steps)


def set_deterministic(seed: int) -> None:
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)


@dataclass
class TrainResult:
    checkpoint: Checkpoint  # best by validation score
    last: Checkpoint
    history: list[dict] = field(default_factory=list)
    validations: list[dict] = field(default_factory=list)


def stack_samples(samples: Sequence[Sample], dtype: torch.dtype) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    shapes = {s.image.shape for s in samples}
    if len(shapes) != 1:
        raise DataError(f"training images must share one size, found {sorted(shapes)}")
    x = torch.as_tensor(np.stack([s.image.transpose(2, 0, 1) for s in samples]), dtype=dtype)
    m = torch.as_tensor(np.stack([s.mask for s in samples]), dtype=dtype)
    x, _ = pad_to_multiple(x)
    h, w = x.shape[-2:]
    m = torch.nn.functional.pad(m, (0, w - m.shape[-1], 0, h - m.shape[-2]))
    y = torch.as_tensor([s.y for s in samples])
    return x, m, y


def _snapshot(model, optimizer, cfg, step, metrics) -> Checkpoint:
    return Checkpoint(
        copy.deepcopy(cfg),
        {k: v.detach().clone() for k, v in model.state_dict().items()},
        copy.deepcopy(optimizer.state_dict()),
        step,
        dict(metrics),
    )


def train(
    cfg: RunConfig,
    samples: Sequence[Sample] | None = None,
    val_samples: Sequence[Sample] | None = None,
    model: ProposeRectifyNet | None = None,
    save: bool = False,
) -> TrainResult:
    """Train from ``cfg``.

    Samples default to the config's manifests; validation falls back to the
    training set when no validation manifest is configured. With ``save``,
    ``best.ckpt`` and ``last.ckpt`` are written to ``cfg.data.out_dir``.
    """
    if samples is None:
        if not cfg.data.train_manifest:
            raise ConfigurationError("no training manifest configured")
        samples = load_samples(cfg.data.train_manifest)
    if not samples:
        raise ConfigurationError("training manifest is empty")
    if val_samples is None:
        val_samples = load_samples(cfg.data.val_manifest) if cfg.data.val_manifest else samples

    if cfg.deterministic:
        set_deterministic(cfg.seed)
    dtype = DTYPES[cfg.dtype]
    model = model if model is not None else build_model(cfg)
    model.train()
    o = cfg.optim
    optimizer = torch.optim.AdamW(model.parameters(), lr=lr_at(1, cfg), betas=(o.beta1, o.beta2), weight_decay=o.weight_decay)
    x_all, m_all, y_all = stack_samples(samples, dtype)
    n = len(samples)
    gen = torch.Generator().manual_seed(cfg.seed)
    autocast = (
        torch.autocast("cpu", dtype=torch.bfloat16) if cfg.mixed_precision else contextlib.nullcontext()
    )

    history: list[dict] = []
    validations: list[dict] = []
    best: Checkpoint | None = None
    best_score = -math.inf
    step = 0
    done = False
    for epoch in range(1, cfg.epochs + 1):
        order = torch.randperm(n, generator=gen)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            step += 1
            for group in optimizer.param_groups:
                group["lr"] = lr_at(step, cfg)
            with autocast:
                out = model(x_all[idx])
                losses = pipeline_loss(
                    out.logits.to(dtype), out.mask.probabilities.to(dtype), y_all[idx], m_all[idx], cfg.loss
                )
            total = losses.total
            if not torch.isfinite(total):
                raise DivergenceError(step, float(total.detach()))
            optimizer.zero_grad(set_to_none=True)
            total.backward()
            optimizer.step()
            model.project_constraints()
            history.append({"step": step, "epoch": epoch, "lr": lr_at(step, cfg), **losses.as_floats()})
            if cfg.max_steps is not None and step >= cfg.max_steps:
                done = True
                break
        if epoch % cfg.validate_every == 0 or done or epoch == cfg.epochs:
            report = evaluate_model(model, val_samples)
            score = selection_score(report)
            validations.append({"step": step, "epoch": epoch, "score": score, **report.avg})
            log.info("epoch %d step %d loss %.4f val score %.4f", epoch, step, history[-1]["total"], score)
            if score > best_score:
                best_score = score
                best = _snapshot(model, optimizer, cfg, step, {"score": score, **report.avg})
            model.train()
        if done:
            break

    last = _snapshot(model, optimizer, cfg, step, validations[-1] if validations else {})
    assert best is not None
    if save:
        out = Path(cfg.data.out_dir)
        save_checkpoint(best, out / "best.ckpt")
        save_checkpoint(last, out / "last.ckpt")
    return TrainResult(best, last, history, validations)
