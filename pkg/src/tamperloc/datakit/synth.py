"""Synthetic manipulations on procedurally generated "authentic" images.

Every generator is a pure function of its inputs and ``seed``. Pasted content
is blended through a Gaussian-feathered mask (sigma 2 px, truncated at 4
sigma), so pixels farther than :data:`FEATHER_RADIUS` from the region are
bit-exact copies of the source image.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from PIL import Image, ImageDraw
from scipy import ndimage

from ..errors import GenerationError, InputError

AUTHENTIC = "authentic"
MANIPULATED = "manipulated"
LABELS = (AUTHENTIC, MANIPULATED)

FEATHER_SIGMA = 2.0
FEATHER_TRUNCATE = 4.0
FEATHER_RADIUS = int(FEATHER_TRUNCATE * FEATHER_SIGMA + 0.5)
SPLICE_AREA = (0.01, 0.30)
COPY_MOVE_AREA = (0.01, 0.12)
INPAINT_AREA = (0.01, 0.20)
BLEND_AREA = (0.02, 0.25)
MAX_BLEND_DELTA = 0.14
MAX_TRIES = 100


@dataclass
class Sample:
    image: np.ndarray  # H x W x 3 float64 in [0, 1]
    mask: np.ndarray  # H x W uint8 in {0, 1}
    label: str
    provenance: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.label not in LABELS:
            raise InputError(f"label must be one of {LABELS}, got {self.label!r}")
        if self.mask.shape != self.image.shape[:2]:
            raise InputError(f"mask {self.mask.shape} does not match image {self.image.shape[:2]}")
        positive = bool(np.any(self.mask))
        if (self.label == MANIPULATED) != positive:
            raise InputError(f"{self.label} sample with {'non-empty' if positive else 'empty'} mask")

    @property
    def y(self) -> int:
        return int(self.label == MANIPULATED)


def feather(mask: np.ndarray) -> np.ndarray:
    return ndimage.gaussian_filter(mask.astype(np.float64), FEATHER_SIGMA, mode="constant", truncate=FEATHER_TRUNCATE)


def feather_support(mask: np.ndarray) -> np.ndarray:
    """Pixels the feathered blend can touch."""
    size = 2 * FEATHER_RADIUS + 1
    return ndimage.binary_dilation(mask.astype(bool), structure=np.ones((size, size), dtype=bool))


def _blend(base: np.ndarray, other: np.ndarray, mask: np.ndarray) -> np.ndarray:
    alpha = feather(mask)[..., None]
    return np.clip(base * (1.0 - alpha) + other * alpha, 0.0, 1.0)


def _smooth_field(rng: np.random.Generator, h: int, w: int, sigma: float) -> np.ndarray:
    f = ndimage.gaussian_filter(rng.standard_normal((h, w)), sigma, mode="wrap")
    return (f - f.min()) / (np.ptp(f) + 1e-12)


def synth_authentic(seed: int, size: int | tuple[int, int] = 64) -> np.ndarray:
    """A camera-like scene: smooth shading, a few flat objects, texture and sensor noise."""
    h, w = (size, size) if isinstance(size, int) else size
    rng = np.random.default_rng(seed)
    base = rng.uniform(0.2, 0.8, 3)
    tint = rng.uniform(-0.25, 0.25, 3)
    img = base + tint * _smooth_field(rng, h, w, max(h, w) / 6)[..., None]
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(rng.integers(2, 6)):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        ry, rx = rng.uniform(0.08, 0.3) * h, rng.uniform(0.08, 0.3) * w
        if rng.random() < 0.5:
            inside = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1
        else:
            inside = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        shade = 1 + 0.2 * (_smooth_field(rng, h, w, 4.0) - 0.5)
        img = np.where(inside[..., None], rng.uniform(0.05, 0.95, 3) * shade[..., None], img)
    img = img + 0.03 * (_smooth_field(rng, h, w, 1.0)[..., None] - 0.5)
    img = img + rng.normal(0, rng.uniform(0.004, 0.02), img.shape)
    return np.clip(img, 0.0, 1.0)


def random_region(h: int, w: int, rng: np.random.Generator, area: tuple[float, float]) -> np.ndarray:
    """Random star-shaped polygon covering a fraction ``area`` of the image."""
    lo, hi = area
    for _ in range(MAX_TRIES):
        frac = rng.uniform(lo, hi)
        r = np.sqrt(frac * h * w / np.pi)
        cy = rng.uniform(r * 0.6, h - r * 0.6)
        cx = rng.uniform(r * 0.6, w - r * 0.6)
        n = int(rng.integers(5, 11))
        angles = np.sort(rng.uniform(0, 2 * np.pi, n))
        radii = r * rng.uniform(0.7, 1.3, n)
        pts = [(float(cx + rr * np.cos(a)), float(cy + rr * np.sin(a))) for a, rr in zip(angles, radii)]
        canvas = Image.new("L", (w, h), 0)
        ImageDraw.Draw(canvas).polygon(pts, fill=1)
        mask = np.asarray(canvas, dtype=np.uint8)
        if lo <= mask.mean() <= hi:
            return mask
    raise GenerationError(f"could not draw a region with area in [{lo}, {hi}] after {MAX_TRIES} tries")


def _check_image(image: np.ndarray) -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise InputError(f"expected H x W x 3 image, got {arr.shape}")
    return arr


def synth_splice(host: np.ndarray, donor: np.ndarray, seed: int, area=SPLICE_AREA) -> Sample:
    host, donor = _check_image(host), _check_image(donor)
    if host.shape != donor.shape:
        raise InputError(f"host {host.shape} and donor {donor.shape} differ in size")
    rng = np.random.default_rng(seed)
    mask = random_region(*host.shape[:2], rng, area)
    return Sample(_blend(host, donor, mask), mask, MANIPULATED, {"generator": "splice", "seed": seed})


def _bbox(mask: np.ndarray) -> tuple[int, int, int, int]:
    ys, xs = np.nonzero(mask)
    return ys.min(), ys.max() + 1, xs.min(), xs.max() + 1


def synth_copy_move(image: np.ndarray, seed: int, area=COPY_MOVE_AREA) -> Sample:
    image = _check_image(image)
    h, w = image.shape[:2]
    rng = np.random.default_rng(seed)
    src = random_region(h, w, rng, area)
    y0, y1, x0, x1 = _bbox(src)
    for _ in range(MAX_TRIES):
        dy = int(rng.integers(-y0, h - y1 + 1))
        dx = int(rng.integers(-x0, w - x1 + 1))
        # bounding boxes disjoint => regions disjoint
        if y1 + dy <= y0 or y0 + dy >= y1 or x1 + dx <= x0 or x0 + dx >= x1:
            break
    else:
        raise GenerationError(f"no non-overlapping placement found after {MAX_TRIES} tries")
    dst = np.zeros_like(src)
    dst[y0 + dy:y1 + dy, x0 + dx:x1 + dx] = src[y0:y1, x0:x1]
    shifted = image.copy()
    ys = slice(max(dy, 0), h + min(dy, 0))
    xs = slice(max(dx, 0), w + min(dx, 0))
    shifted[ys, xs] = image[max(-dy, 0):h + min(-dy, 0), max(-dx, 0):w + min(-dx, 0)]
    prov = {"generator": "copy_move", "seed": seed, "offset": [dy, dx]}
    return Sample(_blend(image, shifted, dst), dst, MANIPULATED, prov)


def diffusion_fill(image: np.ndarray, mask: np.ndarray, iterations: int = 400) -> np.ndarray:
    """Harmonic fill of the masked region from its surround (Jacobi iterations)."""
    out = image.copy()
    inside = mask.astype(bool)
    ring = ndimage.binary_dilation(inside) & ~inside
    out[inside] = image[ring].mean(axis=0)
    kernel = np.array([[0, 0.25, 0], [0.25, 0, 0.25], [0, 0.25, 0]])[..., None]
    for _ in range(iterations):
        avg = ndimage.convolve(out, kernel, mode="nearest")
        out[inside] = avg[inside]
    return out


def synth_inpaint(image: np.ndarray, seed: int, area=INPAINT_AREA, noise: float = 0.01) -> Sample:
    image = _check_image(image)
    rng = np.random.default_rng(seed)
    mask = random_region(*image.shape[:2], rng, area)
    inside = mask.astype(bool)
    filled = diffusion_fill(image, mask)
    out = image.copy()
    out[inside] = np.clip(filled[inside] + rng.normal(0, noise, filled[inside].shape), 0.0, 1.0)
    return Sample(out, mask, MANIPULATED, {"generator": "inpaint", "seed": seed})


def _jpeg(image: np.ndarray, quality: int) -> np.ndarray:
    buf = io.BytesIO()
    Image.fromarray(np.round(image * 255).astype(np.uint8)).save(buf, format="JPEG", quality=quality)
    buf.seek(0)
    with Image.open(buf) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def self_blend(image: np.ndarray, seed: int, area=BLEND_AREA) -> Sample:
    """Perturb a copy of the image and blend a region of it back in.

    The result has no semantic anomaly, only pixel-level inconsistency. The
    transform is scaled down if needed so the mean absolute change inside the
    region stays below :data:`MAX_BLEND_DELTA`.
    """
    image = _check_image(image)
    rng = np.random.default_rng(seed)
    mask = random_region(*image.shape[:2], rng, area)
    kind = str(rng.choice(["color", "blur", "jpeg"]))
    if kind == "color":
        gain = rng.uniform(0.94, 1.06, 3)
        shift = rng.uniform(-0.06, 0.06, 3)
        moved = image * gain + shift
    elif kind == "blur":
        moved = ndimage.gaussian_filter(image, (rng.uniform(0.8, 1.6),) * 2 + (0,), mode="reflect")
    else:
        moved = _jpeg(image, int(rng.integers(30, 71)))
    # always add a faint noise mismatch so every region carries a pixel-level trace
    moved = np.clip(moved + rng.normal(0, 0.01, image.shape), 0.0, 1.0)
    inside = mask.astype(bool)
    delta = np.abs(moved - image)[inside].mean()
    if delta > MAX_BLEND_DELTA:
        moved = image + (moved - image) * (MAX_BLEND_DELTA / delta)
    prov = {"generator": "self_blend", "seed": seed, "transform": kind}
    return Sample(_blend(image, moved, mask), mask, MANIPULATED, prov)


def authentic_sample(seed: int, size: int | tuple[int, int] = 64) -> Sample:
    img = synth_authentic(seed, size)
    return Sample(img, np.zeros(img.shape[:2], np.uint8), AUTHENTIC, {"generator": "authentic", "seed": seed})


KINDS = ("splice", "copymove", "inpaint", "selfblend", "authentic")


def generate(kind: str, seed: int, size: int | tuple[int, int] = 64) -> Sample:
    """One sample of ``kind`` built from freshly synthesized authentic images."""
    host = synth_authentic(2 * seed, size)
    if kind == "splice":
        return synth_splice(host, synth_authentic(2 * seed + 1, size), seed)
    if kind == "copymove":
        return synth_copy_move(host, seed)
    if kind == "inpaint":
        return synth_inpaint(host, seed)
    if kind == "selfblend":
        return self_blend(host, seed)
    if kind == "authentic":
        return authentic_sample(2 * seed, size)
    raise InputError(f"unknown generator kind {kind!r}; expected one of {KINDS}")
