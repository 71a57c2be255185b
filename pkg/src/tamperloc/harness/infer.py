from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..images import load_rgb, save_mask
from ..metrics import binarize
from .checkpoint import Checkpoint, load_checkpoint
from .evaluate import model_detector

CLASSES = ("authentic", "manipulated")


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max())
    return z / z.sum()


def write_probability_map(probs: np.ndarray, path: str | Path) -> None:
    """``H, W`` as uint32 little-endian, then row-major float32 probabilities."""
    h, w = probs.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<2I", h, w))
        fh.write(np.ascontiguousarray(probs, dtype="<f4").tobytes())


def read_probability_map(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    h, w = struct.unpack("<2I", raw[:8])
    return np.frombuffer(raw[8:], dtype="<f4").reshape(h, w)


def infer(ckpt: Checkpoint | str | Path, image_path: str | Path, out_dir: str | Path, model=None) -> dict:
    """Run one image; writes ``verdict.json``, ``mask.png`` and ``probability.bin`` to ``out_dir``."""
    image = load_rgb(image_path)
    if model is None:
        if not isinstance(ckpt, Checkpoint):
            ckpt = load_checkpoint(ckpt)
        model = ckpt.build()
    logits, probs = model_detector(model)(image)
    p = softmax(np.asarray(logits, dtype=np.float64))
    verdict = {
        "image": str(image_path),
        "label": CLASSES[int(np.argmax(p))],
        "probabilities": {name: float(v) for name, v in zip(CLASSES, p)},
        "mask_size": [int(probs.shape[0]), int(probs.shape[1])],
    }
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "verdict.json").write_text(json.dumps(verdict, indent=2, sort_keys=True))
    save_mask(binarize(probs), out / "mask.png")
    write_probability_map(probs, out / "probability.bin")
    return verdict
