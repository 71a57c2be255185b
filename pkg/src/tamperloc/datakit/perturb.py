"""Severity-indexed image degradations for robustness sweeps.

Severity 0 is the identity for every kind. For ``sev >= 1``:

=========== ==================================================
brightness  ``x * (1 + 0.15 sev)``
contrast    ``mean + (x - mean) * (1 + 0.2 sev)``
darken      ``x * (1 - 0.12 sev)``
dither      Floyd-Steinberg to ``8 - sev`` bits per channel
jpeg2000    codec round trip at compression ratio ``10 * 2**(sev - 1)``
pink_noise  additive 1/f noise with std ``0.02 sev``
=========== ==================================================

All outputs are clipped to ``[0, 1]``.
"""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image, features

from ..errors import InputError, UnsupportedPerturbation

KINDS = ("brightness", "contrast", "darken", "dither", "jpeg2000", "pink_noise")
MAX_SEVERITY = 5

FORMULAS = {
    "brightness": "x * (1 + 0.15 * sev)",
    "contrast": "mean + (x - mean) * (1 + 0.2 * sev)",
    "darken": "x * (1 - 0.12 * sev)",
    "dither": "Floyd-Steinberg error diffusion to (8 - sev) bits/channel",
    "jpeg2000": "JPEG2000 round trip at compression ratio 10 * 2**(sev - 1)",
    "pink_noise": "x + 1/f noise with std 0.02 * sev",
}


@dataclass(frozen=True)
class PerturbationSpec:
    kind: str
    severity: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown perturbation {self.kind!r}; expected one of {KINDS}")
        if not 0 <= int(self.severity) <= MAX_SEVERITY:
            raise InputError(f"severity must be in 0..{MAX_SEVERITY}, got {self.severity}")


def codec_available(kind: str) -> bool:
    if kind == "jpeg2000":
        return bool(features.check("jpg_2000"))
    return kind in KINDS


def unsupported_kinds(kinds) -> list[str]:
    return [k for k in kinds if not codec_available(k)]


def floyd_steinberg(image: np.ndarray, bits: int) -> np.ndarray:
    levels = 2 ** bits - 1
    out = image.astype(np.float64).copy()
    h, w = out.shape[:2]
    for y in range(h):
        row = out[y]
        for x in range(w):
            old = row[x].copy()
            new = np.round(np.clip(old, 0.0, 1.0) * levels) / levels
            row[x] = new
            err = old - new
            if x + 1 < w:
                row[x + 1] += err * (7 / 16)
            if y + 1 < h:
                below = out[y + 1]
                if x > 0:
                    below[x - 1] += err * (3 / 16)
                below[x] += err * (5 / 16)
                if x + 1 < w:
                    below[x + 1] += err * (1 / 16)
    return out


def jpeg2000_roundtrip(image: np.ndarray, ratio: float) -> np.ndarray:
    if not codec_available("jpeg2000"):
        raise UnsupportedPerturbation("JPEG2000 codec (OpenJPEG) is not available in Pillow")
    buf = io.BytesIO()
    arr = np.round(np.clip(image, 0, 1) * 255).astype(np.uint8)
    Image.fromarray(arr).save(buf, format="JPEG2000", quality_mode="rates", quality_layers=[ratio], irreversible=True)
    buf.seek(0)
    with Image.open(buf) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def pink_noise(shape: tuple[int, ...], seed: int) -> np.ndarray:
    """Unit-variance noise with power spectrum ~ 1/f, independent per channel."""
    rng = np.random.default_rng(seed)
    h, w = shape[:2]
    white = rng.standard_normal(shape)
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    f = np.sqrt(fx ** 2 + fy ** 2)
    f[0, 0] = np.inf  # drop DC
    spec = np.fft.fft2(white, axes=(0, 1)) / np.sqrt(f)[..., None]
    noise = np.real(np.fft.ifft2(spec, axes=(0, 1)))
    noise -= noise.mean(axis=(0, 1))
    return noise / (noise.std(axis=(0, 1)) + 1e-12)


def perturb(image: np.ndarray, spec: PerturbationSpec) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    sev = int(spec.severity)
    if not codec_available(spec.kind):
        raise UnsupportedPerturbation(f"perturbation {spec.kind!r} is not supported in this environment")
    if sev == 0:
        return image.copy()
    if spec.kind == "brightness":
        out = image * (1 + 0.15 * sev)
    elif spec.kind == "contrast":
        mean = image.mean()
        out = mean + (image - mean) * (1 + 0.2 * sev)
    elif spec.kind == "darken":
        out = image * (1 - 0.12 * sev)
    elif spec.kind == "dither":
        out = floyd_steinberg(image, 8 - sev)
    elif spec.kind == "jpeg2000":
        out = jpeg2000_roundtrip(image, 10 * 2 ** (sev - 1))
    else:
        out = image + 0.02 * sev * pink_noise(image.shape, spec.seed)
    return np.clip(out, 0.0, 1.0)
