"""Forensic-enhanced mask decoding.

A small stride-16 encoder stands in for the SAM image encoder. Forensic
features are aligned to the embedding grid, combined with it into a
discrepancy map ``S``, and ``S`` drives a spatial and a channel gate that
amplify the image embedding before a prompt-conditioned mask decoder.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError, ContractError, InputError
from .layers import MLP, attend, attention, sinusoidal_pe_2d

STRIDE = 16
THRESHOLD = 0.5


@dataclass
class MaskPrediction:
    probabilities: torch.Tensor  # B x H x W in [0, 1]
    logits: torch.Tensor | None = None
    threshold: float = THRESHOLD

    def binary(self, threshold: float | None = None) -> torch.Tensor:
        t = self.threshold if threshold is None else threshold
        return self.probabilities >= t


@dataclass
class Gates:
    spatial: torch.Tensor  # B x 1 x h x w
    channel: torch.Tensor  # B x c


class ImageEncoder(nn.Module):
    """Full-resolution stem plus four stride-2 stages.

    Returns the stride-16 embedding and the stride 1/2/4/8 maps used as
    high-resolution skips by the decoder.
    """

    def __init__(self, c: int = 64, widths: tuple[int, ...] = (8, 16, 32, 64)):
        super().__init__()
        self.stem = nn.Sequential(nn.Conv2d(3, widths[0], 3, padding=1), nn.GroupNorm(1, widths[0]))
        chans = [widths[0], *widths[1:], c]
        self.stages = nn.ModuleList(
            nn.Sequential(
                nn.Conv2d(chans[i], chans[i + 1], 3, stride=2, padding=1),
                nn.GroupNorm(1, chans[i + 1]),
                nn.GELU(),
                nn.Conv2d(chans[i + 1], chans[i + 1], 3, padding=1),
                nn.GroupNorm(1, chans[i + 1]),
            )
            for i in range(4)
        )
        self.widths = tuple(widths)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, list[torch.Tensor]]:
        h, w = x.shape[-2:]
        if h % STRIDE or w % STRIDE:
            raise InputError(f"encoder input {h}x{w} is not a multiple of {STRIDE}; pad first")
        x = self.stem(x)
        skips = [x]
        x = F.gelu(x)
        for i, stage in enumerate(self.stages):
            x = stage(x)
            if i < 3:
                skips.append(x)
                x = F.gelu(x)
        return x, skips


class Aligner(nn.Module):
    """Strided convolutions taking ``K x H x W`` forensics to the ``c x H/16 x W/16`` grid."""

    def __init__(self, channels: int, c: int, width: int = 32):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, width, 4, stride=4),
            nn.GELU(),
            nn.Conv2d(width, width, 4, stride=4),
            nn.GELU(),
            nn.Conv2d(width, c, 1),
        )

    def forward(self, F_: torch.Tensor, target: torch.Size | tuple[int, ...] | None = None) -> torch.Tensor:
        out = self.body(F_)
        if target is not None and tuple(out.shape[-3:]) != tuple(target[-3:]):
            raise ConfigurationError(f"aligned forensics {tuple(out.shape[-3:])} do not match embedding {tuple(target[-3:])}")
        return out


def discrepancy_features(E: torch.Tensor, Ft: torch.Tensor) -> torch.Tensor:
    """``[E, Ft, E - Ft, E * Ft]`` along channels."""
    if E.shape != Ft.shape:
        raise ContractError(f"embedding {tuple(E.shape)} and aligned forensics {tuple(Ft.shape)} differ")
    return torch.cat([E, Ft, E - Ft, E * Ft], dim=1)


class Amplifier(nn.Module):
    def __init__(self, c: int, reduction: int = 4):
        super().__init__()
        self.spatial = nn.Conv2d(c, 1, 3, padding=1)
        self.channel = MLP([c, max(c // reduction, 1), c])

    def gates(self, S: torch.Tensor) -> Gates:
        s_p = torch.sigmoid(self.spatial(S))
        s_c = torch.sigmoid(self.channel(S.mean(dim=(2, 3))))
        return Gates(s_p, s_c)

    def forward(self, E: torch.Tensor, S: torch.Tensor) -> tuple[torch.Tensor, Gates]:
        g = self.gates(S)
        return E * (1 + g.channel[:, :, None, None]) * (1 + g.spatial), g


class TwoWayBlock(nn.Module):
    """Tokens attend to themselves and to the image; the image attends back to the tokens."""

    def __init__(self, c: int, heads: int, mlp_ratio: int = 2):
        super().__init__()
        self.self_attn = attention(heads, c)
        self.norm1 = nn.LayerNorm(c)
        self.t2i = attention(heads, c)
        self.norm2 = nn.LayerNorm(c)
        self.mlp = MLP([c, mlp_ratio * c, c])
        self.norm3 = nn.LayerNorm(c)
        self.i2t = attention(heads, c)
        self.norm4 = nn.LayerNorm(c)

    def forward(self, tokens, keys, key_pe):
        tokens = self.norm1(tokens + attend(self.self_attn, tokens, tokens, tokens))
        tokens = self.norm2(tokens + attend(self.t2i, tokens, keys + key_pe, keys))
        tokens = self.norm3(tokens + self.mlp(tokens))
        keys = self.norm4(keys + attend(self.i2t, keys + key_pe, tokens, tokens))
        return tokens, keys


class MaskDecoder(nn.Module):
    """Single-prompt mask decoder.

    The projected segmentation embedding joins a learned mask token; after
    two-way attention, the mask token is mapped by a small hypernetwork to
    per-channel weights over the x16 upsampled embedding. With
    ``high_res=True`` the encoder's stride 8/4/2/1 maps are added along the
    upsampling path.
    """

    def __init__(self, c: int, d: int, heads: int = 8, skip_widths: tuple[int, ...] | None = (8, 16, 32, 64)):
        super().__init__()
        self.c = c
        self.prompt_proj = nn.Linear(d, c)
        self.mask_token = nn.Parameter(torch.randn(1, 1, c) * 0.02)
        self.block = TwoWayBlock(c, heads)
        self.final_attn = attention(heads, c)
        self.final_norm = nn.LayerNorm(c)
        chans = [c, max(c // 2, 4), max(c // 4, 4), max(c // 8, 4), max(c // 8, 4)]
        self.up = nn.ModuleList(nn.ConvTranspose2d(chans[i], chans[i + 1], 2, stride=2) for i in range(4))
        self.up_norm = nn.ModuleList(nn.GroupNorm(1, chans[i + 1]) for i in range(4))
        self.skips = None
        if skip_widths is not None:
            # encoder stride-8, 4, 2, 1 maps feed upsampling stages 0, 1, 2, 3
            self.skips = nn.ModuleList(
                nn.Conv2d(w, chans[i + 1], 1) for i, w in enumerate(reversed(skip_widths))
            )
        self.hyper = MLP([c, c, chans[-1]])
        self.mask_bias = nn.Parameter(torch.zeros(1))

    def forward(self, E_hat: torch.Tensor, e_seg_hat: torch.Tensor, skips: list[torch.Tensor] | None = None) -> MaskPrediction:
        b, c, h, w = E_hat.shape
        keys = E_hat.flatten(2).transpose(1, 2)
        key_pe = sinusoidal_pe_2d(h, w, c, keys.dtype, keys.device)
        prompt = self.prompt_proj(e_seg_hat).unsqueeze(1)
        tokens = torch.cat([self.mask_token.to(keys.dtype).expand(b, -1, -1), prompt], dim=1)
        tokens, keys = self.block(tokens, keys, key_pe)
        tokens = self.final_norm(tokens + attend(self.final_attn, tokens, keys + key_pe, keys))

        x = keys.transpose(1, 2).reshape(b, c, h, w)
        for i, up in enumerate(self.up):
            x = up(x)
            if self.skips is not None:
                if skips is None:
                    raise ContractError("decoder built with high-res skips but none were given")
                x = x + self.skips[i](skips[3 - i])
            x = F.gelu(self.up_norm[i](x))
        weights = self.hyper(tokens[:, 0])
        logits = torch.einsum("bc,bchw->bhw", weights, x) + self.mask_bias
        return MaskPrediction(torch.sigmoid(logits), logits)


class Segmenter(nn.Module):
    def __init__(self, channels: int, d: int = 256, c: int = 64, heads: int = 8, high_res: bool = True):
        super().__init__()
        self.encoder = ImageEncoder(c)
        self.aligner = Aligner(channels, c)
        self.discrepancy = nn.Conv2d(4 * c, c, 1)
        self.amplifier = Amplifier(c)
        self.decoder = MaskDecoder(c, d, heads, self.encoder.widths if high_res else None)
        self.high_res = high_res

    def encode_image(self, image: torch.Tensor) -> torch.Tensor:
        return self.encoder(image)[0]

    def align_forensics(self, F_: torch.Tensor, target) -> torch.Tensor:
        return self.aligner(F_, target)

    def build_discrepancy(self, E: torch.Tensor, Ft: torch.Tensor) -> torch.Tensor:
        return self.discrepancy(discrepancy_features(E, Ft))

    def amplify(self, E: torch.Tensor, S: torch.Tensor) -> torch.Tensor:
        return self.amplifier(E, S)[0]

    def decode_mask(self, E_hat: torch.Tensor, e_seg_hat: torch.Tensor, skips: list[torch.Tensor] | None = None) -> MaskPrediction:
        return self.decoder(E_hat, e_seg_hat, skips if self.high_res else None)

    def forward(self, image: torch.Tensor, F_: torch.Tensor, e_seg_hat: torch.Tensor, use_esm: bool = True) -> MaskPrediction:
        E, skips = self.encoder(image)
        if use_esm:
            Ft = self.align_forensics(F_, E.shape)
            S = self.build_discrepancy(E, Ft)
            E = self.amplify(E, S)
        return self.decode_mask(E, e_seg_hat, skips)
