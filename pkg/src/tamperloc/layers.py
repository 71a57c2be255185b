from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError


def sinusoidal_pe_2d(h: int, w: int, dim: int, dtype=torch.float32, device=None) -> torch.Tensor:
    """Fixed 2-D sine/cosine encoding, ``(h*w) x dim``, row-major over the grid.

    The first half of the channels encode the row, the second half the column.
    Trailing channels are zero when ``dim`` is not a multiple of 4.
    """
    quarter = dim // 4
    pe = torch.zeros(h * w, dim, dtype=dtype, device=device)
    if quarter == 0:
        return pe
    freqs = torch.exp(-math.log(10000.0) * torch.arange(quarter, dtype=dtype, device=device) / quarter)
    ys = torch.arange(h, dtype=dtype, device=device).repeat_interleave(w)
    xs = torch.arange(w, dtype=dtype, device=device).repeat(h)
    pe[:, 0:quarter] = torch.sin(ys[:, None] * freqs)
    pe[:, quarter:2 * quarter] = torch.cos(ys[:, None] * freqs)
    pe[:, 2 * quarter:3 * quarter] = torch.sin(xs[:, None] * freqs)
    pe[:, 3 * quarter:4 * quarter] = torch.cos(xs[:, None] * freqs)
    return pe


class PatchEmbed(nn.Module):
    """Non-overlapping ``p x p`` patches -> linear projection to ``dim`` + fixed positional encoding.

    Inputs whose sides are not multiples of ``p`` are zero-padded on the
    bottom/right, giving ``ceil(H/p) * ceil(W/p)`` tokens.
    """

    def __init__(self, in_channels: int, dim: int, patch: int):
        super().__init__()
        self.patch = patch
        self.dim = dim
        self.proj = nn.Conv2d(in_channels, dim, kernel_size=patch, stride=patch)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, tuple[int, int]]:
        h, w = x.shape[-2:]
        p = self.patch
        if p > min(h, w):
            raise ConfigurationError(f"patch size {p} exceeds feature map size {h}x{w}")
        x = F.pad(x, (0, (-w) % p, 0, (-h) % p))
        y = self.proj(x)
        gh, gw = y.shape[-2:]
        tokens = y.flatten(2).transpose(1, 2)
        return tokens + sinusoidal_pe_2d(gh, gw, self.dim, y.dtype, y.device), (gh, gw)


class MLP(nn.Sequential):
    def __init__(self, dims: list[int]):
        layers: list[nn.Module] = []
        for i in range(len(dims) - 1):
            layers.append(nn.Linear(dims[i], dims[i + 1]))
            if i < len(dims) - 2:
                layers.append(nn.GELU())
        super().__init__(*layers)


def attention(num_heads: int, dim: int) -> nn.MultiheadAttention:
    if dim % num_heads:
        raise ConfigurationError(f"embedding width {dim} not divisible by {num_heads} heads")
    return nn.MultiheadAttention(dim, num_heads, batch_first=True)


def attend(attn: nn.MultiheadAttention, q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    return attn(q, k, v, need_weights=False)[0]
