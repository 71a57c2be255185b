"""JSON-lines dataset manifests.

One row per sample::

    {"image_path": "...", "mask_path": "..." | null, "label": "authentic" | "manipulated", "provenance": {...}}

Relative paths are resolved against the manifest's directory.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from ..errors import DataError, ManifestError
from ..images import load_mask, load_rgb, save_mask, save_rgb
from .synth import AUTHENTIC, LABELS, MANIPULATED, Sample


@dataclass
class ManifestRow:
    image_path: str
    mask_path: str | None
    label: str
    provenance: dict[str, Any] = field(default_factory=dict)


def _parse_row(obj: Any, line: int) -> ManifestRow:
    if not isinstance(obj, dict):
        raise ManifestError("row is not a JSON object", line)
    missing = {"image_path", "mask_path", "label"} - set(obj)
    if missing:
        raise ManifestError(f"missing keys {sorted(missing)}", line)
    label = obj["label"]
    if label not in LABELS:
        raise ManifestError(f"label must be one of {LABELS}, got {label!r}", line)
    if not isinstance(obj["image_path"], str):
        raise ManifestError("image_path must be a string", line)
    mask = obj["mask_path"]
    if (mask is None) != (label == AUTHENTIC):
        raise ManifestError("mask_path must be null exactly for authentic rows", line)
    return ManifestRow(obj["image_path"], mask, label, obj.get("provenance") or {})


def write_manifest(rows: Iterable[ManifestRow], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(asdict(row), sort_keys=True) + "\n")


def read_manifest(path: str | Path) -> list[ManifestRow]:
    rows = []
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    for i, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"malformed JSON ({exc.msg})", i) from exc
        rows.append(_parse_row(obj, i))
    return rows


def save_samples(samples: Iterable[Sample], out_dir: str | Path, prefix: str = "sample") -> list[ManifestRow]:
    """Write images/masks as PNG plus ``manifest.jsonl`` under ``out_dir``."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(exist_ok=True)
    rows = []
    for i, s in enumerate(samples):
        name = f"{prefix}_{i:05d}.png"
        save_rgb(s.image, out / "images" / name)
        mask_rel = None
        if s.label == MANIPULATED:
            save_mask(s.mask, out / "masks" / name)
            mask_rel = f"masks/{name}"
        rows.append(ManifestRow(f"images/{name}", mask_rel, s.label, dict(s.provenance)))
    write_manifest(rows, out / "manifest.jsonl")
    return rows


def load_samples(path: str | Path) -> list[Sample]:
    base = Path(path).parent
    samples = []
    for row in read_manifest(path):
        image = load_rgb(base / row.image_path)
        if row.mask_path is None:
            mask = np.zeros(image.shape[:2], np.uint8)
        else:
            mask = load_mask(base / row.mask_path)
        if mask.shape != image.shape[:2]:
            raise DataError(f"mask {row.mask_path} does not match image {row.image_path}")
        try:
            samples.append(Sample(image, mask, row.label, dict(row.provenance, image_path=row.image_path)))
        except Exception as exc:
            raise DataError(f"{row.image_path}: {exc}") from exc
    return samples
