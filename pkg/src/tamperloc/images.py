"""Image validation and conversion helpers.

Public functions take ``RgbImage`` arrays as ``H x W x 3`` floats in ``[0, 1]``;
the networks work on ``B x C x H x W`` tensors.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import DataError, InputError

MIN_SIDE = 16


def validate_image(pixels: np.ndarray) -> np.ndarray:
    arr = np.asarray(pixels)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise InputError(f"expected H x W x 3 image, got shape {arr.shape}")
    if arr.shape[0] < MIN_SIDE or arr.shape[1] < MIN_SIDE:
        raise InputError(f"image must be at least {MIN_SIDE}x{MIN_SIDE}, got {arr.shape[:2]}")
    if not np.all(np.isfinite(arr)):
        raise InputError("image contains non-finite pixels")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise InputError("image values must lie in [0, 1]")
    return arr


def check_finite(x: torch.Tensor) -> None:
    if not torch.isfinite(x).all():
        raise InputError("input contains non-finite values")


def to_tensor(pixels: np.ndarray, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Validated ``H x W x 3`` array -> ``1 x 3 x H x W`` tensor (copy)."""
    arr = validate_image(pixels)
    return torch.as_tensor(np.ascontiguousarray(arr.transpose(2, 0, 1)), dtype=dtype).unsqueeze(0).clone()


def to_numpy(x: torch.Tensor) -> np.ndarray:
    """``1 x 3 x H x W`` or ``3 x H x W`` tensor -> ``H x W x 3`` float64 array."""
    if x.ndim == 4:
        x = x[0]
    return x.detach().cpu().double().numpy().transpose(1, 2, 0)


def as_batch(image) -> torch.Tensor:
    """Accept an HWC array, CHW tensor, or BCHW tensor; return BCHW."""
    if isinstance(image, np.ndarray):
        return to_tensor(image)
    if image.ndim == 3:
        image = image.unsqueeze(0)
    if image.ndim != 4 or image.shape[1] != 3:
        raise InputError(f"expected B x 3 x H x W tensor, got {tuple(image.shape)}")
    check_finite(image)
    return image


def pad_to_multiple(x: torch.Tensor, multiple: int = 16) -> tuple[torch.Tensor, tuple[int, int]]:
    """Reflect-pad bottom/right so both spatial dims divide ``multiple``."""
    h, w = x.shape[-2:]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph or pw:
        mode = "reflect" if ph < h and pw < w else "replicate"
        x = F.pad(x, (0, pw, 0, ph), mode=mode)
    return x, (h, w)


def load_rgb(path: str | Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return arr


def load_mask(path: str | Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"))
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read mask {path}: {exc}") from exc
    return (arr >= 128).astype(np.uint8)


def save_rgb(pixels: np.ndarray, path: str | Path) -> None:
    arr = np.clip(np.round(np.asarray(pixels) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def save_mask(mask: np.ndarray, path: str | Path) -> None:
    """8-bit single-channel PNG, 255 = manipulated."""
    arr = (np.asarray(mask) > 0).astype(np.uint8) * 255
    Image.fromarray(arr, mode="L").save(path)
