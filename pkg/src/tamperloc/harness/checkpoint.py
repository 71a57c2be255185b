"""Single-file checkpoint archive.

Layout: 8-byte magic, 64-byte hex SHA-256 of the payload, then the payload
(a ``torch.save`` of plain containers and tensors).
"""
from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import torch

from ..errors import IncompatibleCheckpoint, IntegrityError, VersionError
from .config import RunConfig
from .model import ProposeRectifyNet, build_model

FORMAT_VERSION = "1"
MAGIC = b"TLCKPT\x00\x01"
DIGEST_LEN = 64


@dataclass
class Checkpoint:
    config: RunConfig
    model_state: dict[str, torch.Tensor]
    optimizer_state: dict[str, Any] | None = None
    step: int = 0
    metrics: dict[str, Any] = field(default_factory=dict)
    version: str = FORMAT_VERSION

    def build(self) -> ProposeRectifyNet:
        model = build_model(self.config)
        load_state(model, self.model_state)
        model.eval()
        return model


def load_state(model: torch.nn.Module, state: dict[str, torch.Tensor]) -> None:
    own = model.state_dict()
    for name, tensor in state.items():
        if name not in own:
            raise IncompatibleCheckpoint(f"checkpoint array {name!r} has no counterpart in the model")
        if tuple(own[name].shape) != tuple(tensor.shape):
            raise IncompatibleCheckpoint(
                f"array {name!r} has shape {tuple(tensor.shape)} in the checkpoint, model expects {tuple(own[name].shape)}"
            )
    missing = set(own) - set(state)
    if missing:
        raise IncompatibleCheckpoint(f"checkpoint lacks arrays {sorted(missing)[:5]}")
    model.load_state_dict(state)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    buf = io.BytesIO()
    torch.save(
        {
            "version": ckpt.version,
            "config": ckpt.config.to_dict(),
            "model": ckpt.model_state,
            "optimizer": ckpt.optimizer_state,
            "step": ckpt.step,
            "metrics": ckpt.metrics,
        },
        buf,
    )
    payload = buf.getvalue()
    digest = hashlib.sha256(payload).hexdigest().encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(MAGIC + digest + payload)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    head = len(MAGIC) + DIGEST_LEN
    if len(raw) < head or raw[: len(MAGIC)] != MAGIC:
        raise IntegrityError(f"{path} is not a checkpoint archive or is truncated")
    digest, payload = raw[len(MAGIC):head], raw[head:]
    if hashlib.sha256(payload).hexdigest().encode() != digest:
        raise IntegrityError(f"{path}: checksum mismatch (file truncated or corrupted)")
    data = torch.load(io.BytesIO(payload), map_location="cpu", weights_only=True)
    version = str(data.get("version"))
    if version != FORMAT_VERSION:
        raise VersionError(f"checkpoint format version {version!r} is not supported (expected {FORMAT_VERSION!r}); migrate it first")
    return Checkpoint(
        RunConfig.from_dict(data["config"]),
        data["model"],
        data.get("optimizer"),
        int(data.get("step", 0)),
        data.get("metrics") or {},
        version,
    )
