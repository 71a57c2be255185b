"""Multi-feature forensic extractor.

Four low-level extractors run on the RGB image and are concatenated along
channels in a fixed order:

    srm (9) | bayar (3) | sobel (3) | noise (3)   ->  K = 18

All extractors use reflect padding and preserve spatial size. Tensors are
``B x C x H x W``.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.func import functional_call

from .errors import ConstraintViolation, ContractError, InputError, NotInitializedError
from .images import as_batch, check_finite

SRM_CHANNELS = 9
BAYAR_CHANNELS = 3
SOBEL_CHANNELS = 3
NOISE_CHANNELS = 3
LAYOUT: tuple[tuple[str, int], ...] = (
    ("srm", SRM_CHANNELS),
    ("bayar", BAYAR_CHANNELS),
    ("sobel", SOBEL_CHANNELS),
    ("noise", NOISE_CHANNELS),
)
NUM_CHANNELS = sum(n for _, n in LAYOUT)

BAYAR_SIZE = 5
BAYAR_TOL = 1e-5

LUMA = (0.299, 0.587, 0.114)


def _srm_kernels() -> np.ndarray:
    first = np.zeros((5, 5))
    first[2, 2:4] = [-1.0, 1.0]
    second = np.zeros((5, 5))
    second[2, 1:4] = [1.0, -2.0, 1.0]
    square = np.array(
        [
            [-1, 2, -2, 2, -1],
            [2, -6, 8, -6, 2],
            [-2, 8, -12, 8, -2],
            [2, -6, 8, -6, 2],
            [-1, 2, -2, 2, -1],
        ],
        dtype=np.float64,
    )
    ks = [first, second, square]
    return np.stack([k / np.abs(k).max() for k in ks])


SRM_KERNELS = _srm_kernels()  # 3 x 5 x 5
SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.copy()


@dataclass(frozen=True)
class ForensicFeatureMap:
    values: torch.Tensor  # B x K x H x W
    channel_layout: tuple[tuple[str, int], ...] = LAYOUT

    def __post_init__(self):
        k = sum(n for _, n in self.channel_layout)
        if self.values.shape[1] != k:
            raise ContractError(f"layout declares {k} channels, values have {self.values.shape[1]}")

    def slice(self, name: str) -> torch.Tensor:
        start = 0
        for key, n in self.channel_layout:
            if key == name:
                return self.values[:, start:start + n]
            start += n
        raise KeyError(name)


def _reflect(x: torch.Tensor, pad: int) -> torch.Tensor:
    return F.pad(x, (pad, pad, pad, pad), mode="reflect")


def apply_srm(image) -> torch.Tensor:
    """Fixed SRM residuals, each kernel applied to each colour channel.

    Output channel ``3 * colour + kernel``.
    """
    x = as_batch(image)
    w = torch.as_tensor(SRM_KERNELS, dtype=x.dtype, device=x.device)
    w = w.unsqueeze(1).repeat(3, 1, 1, 1)  # 9 x 1 x 5 x 5, groups of 3 per colour
    return F.conv2d(_reflect(x, 2), w, groups=3)


def project_bayar(weights: torch.Tensor) -> torch.Tensor:
    """Return a copy of ``weights`` (``... x 5 x 5``) with the Bayar constraint.

    Every 5x5 slice gets centre -1 and off-centre taps summing to 1. Off-centre
    taps are rescaled by their sum; if that sum is (numerically) zero, a uniform
    additive correction is used instead.
    """
    if not torch.isfinite(weights).all():
        raise InputError("Bayar weights must be finite")
    dtype = weights.dtype
    w = weights.detach().to(torch.float64, copy=True)
    size = w.shape[-1]
    c = size // 2
    flat = w.reshape(-1, size * size)
    centre = c * size + c
    off = torch.ones(size * size, dtype=torch.bool, device=w.device)
    off[centre] = False
    taps = flat[:, off]
    total = taps.sum(dim=1, keepdim=True)
    degenerate = total.abs() < 1e-8
    scaled = taps / torch.where(degenerate, torch.ones_like(total), total)
    shifted = taps + (1.0 - total) / taps.shape[1]
    taps = torch.where(degenerate, shifted, scaled).to(dtype)
    if dtype != torch.float64:
        # rounding to a narrower dtype perturbs the sum; fold the residual into
        # the smallest tap, where the dtype's spacing is finest
        rows = torch.arange(taps.shape[0], device=w.device)
        small = taps.abs().argmin(dim=1)
        for _ in range(2):
            resid = 1.0 - taps.double().sum(dim=1)
            taps[rows, small] = (taps[rows, small].double() + resid).to(dtype)
    out = torch.empty(flat.shape, dtype=dtype, device=w.device)
    out[:, off] = taps
    out[:, centre] = -1.0
    return out.reshape(weights.shape)


def check_bayar(weights: torch.Tensor, tol: float = BAYAR_TOL) -> None:
    size = weights.shape[-1]
    c = size // 2
    flat = weights.detach().reshape(-1, size, size)
    centre = flat[:, c, c]
    flat = flat.double()
    off_sum = flat.sum(dim=(1, 2)) - centre
    if not torch.all(centre == -1.0):
        raise ConstraintViolation("Bayar centre tap is not -1; call project_bayar first")
    if not torch.all((off_sum - 1.0).abs() <= tol):
        raise ConstraintViolation(f"Bayar off-centre taps do not sum to 1 (max err {(off_sum - 1).abs().max():.3g})")


def apply_bayar(weights: torch.Tensor, image) -> torch.Tensor:
    check_bayar(weights)
    x = as_batch(image)
    return F.conv2d(_reflect(x, weights.shape[-1] // 2), weights.to(x.dtype))


def apply_sobel(image) -> torch.Tensor:
    """``gx, gy, |g|`` of the luma channel."""
    x = as_batch(image)
    luma = torch.as_tensor(LUMA, dtype=x.dtype, device=x.device).view(1, 3, 1, 1)
    y = (x * luma).sum(dim=1, keepdim=True)
    k = torch.as_tensor(np.stack([SOBEL_X, SOBEL_Y]), dtype=x.dtype, device=x.device).unsqueeze(1)
    g = F.conv2d(_reflect(y, 1), k)
    mag = torch.sqrt(g[:, :1] ** 2 + g[:, 1:] ** 2)
    return torch.cat([g, mag], dim=1)


class BayarConv(nn.Module):
    """Learnable 5x5 constrained convolution, 3 -> 3 channels.

    The constraint is enforced by projection; the trainer calls
    :meth:`project_` after each optimizer step.
    """

    def __init__(self, channels: int = BAYAR_CHANNELS, size: int = BAYAR_SIZE):
        super().__init__()
        w = torch.rand(channels, 3, size, size)
        self.weight = nn.Parameter(project_bayar(w))

    @torch.no_grad()
    def project_(self) -> None:
        self.weight.copy_(project_bayar(self.weight))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return apply_bayar(self.weight, x)


class NoiseNet(nn.Module):
    """Small trainable residual extractor standing in for a pretrained noiseprint model."""

    def __init__(self, width: int = 16):
        super().__init__()
        layers: list[nn.Module] = []
        chans = [3, width, width, width, NOISE_CHANNELS]
        for i in range(4):
            layers.append(nn.Conv2d(chans[i], chans[i + 1], 3, padding=1, padding_mode="reflect"))
            if i < 3:
                layers.append(nn.GELU())
        self.body = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.body(x)


def apply_noise_net(params: Mapping[str, torch.Tensor] | None, image, width: int = 16) -> torch.Tensor:
    """Run a :class:`NoiseNet` from an explicit parameter mapping (its ``state_dict`` keys)."""
    skeleton = NoiseNet(width)
    expected = set(dict(skeleton.named_parameters()))
    if params is None:
        raise NotInitializedError("noise-net parameters are not initialized")
    missing = expected - set(params)
    if missing:
        raise NotInitializedError(f"noise-net parameters missing: {sorted(missing)}")
    return functional_call(skeleton, dict(params), (as_batch(image),))


class FilterBank(nn.Module):
    """Concatenates SRM, Bayar, Sobel and noise-net outputs into an 18-channel map."""

    layout = LAYOUT
    num_channels = NUM_CHANNELS

    def __init__(self, noise_width: int = 16):
        super().__init__()
        self.bayar = BayarConv()
        self.noise = NoiseNet(noise_width)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        check_finite(x)
        parts = [apply_srm(x), self.bayar(x), apply_sobel(x), self.noise(x)]
        hw = x.shape[-2:]
        for (name, n), p in zip(LAYOUT, parts):
            if p.shape[-2:] != hw or p.shape[1] != n:
                raise ContractError(f"{name} produced {tuple(p.shape)}, expected {n} x {tuple(hw)}")
        return torch.cat(parts, dim=1)

    def extract_features(self, image) -> ForensicFeatureMap:
        return ForensicFeatureMap(self(as_batch(image)))


def write_feature_map(fmap: ForensicFeatureMap, path: str | Path) -> None:
    """Dump the first map of the batch: ``H, W, K`` as uint32 LE, then row-major float32 ``H x W x K``.

    The channel layout goes to a ``.json`` sidecar next to ``path``.
    """
    path = Path(path)
    arr = fmap.values[0].detach().cpu().numpy().transpose(1, 2, 0).astype("<f4")
    h, w, k = arr.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<3I", h, w, k))
        fh.write(np.ascontiguousarray(arr).tobytes())
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps({"channel_layout": [[n, c] for n, c in fmap.channel_layout]})
    )


def read_feature_map(path: str | Path) -> ForensicFeatureMap:
    path = Path(path)
    raw = path.read_bytes()
    h, w, k = struct.unpack("<3I", raw[:12])
    body = np.frombuffer(raw[12:], dtype="<f4")
    if body.size != h * w * k:
        raise InputError(f"{path}: expected {h * w * k} floats, found {body.size}")
    layout = tuple(
        (n, int(c)) for n, c in json.loads(path.with_suffix(path.suffix + ".json").read_text())["channel_layout"]
    )
    values = torch.from_numpy(body.reshape(h, w, k).transpose(2, 0, 1).copy()).unsqueeze(0)
    return ForensicFeatureMap(values, layout)
