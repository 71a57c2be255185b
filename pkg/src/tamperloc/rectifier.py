"""Forensic rectification of the proposal embeddings.

Pipeline per image::

    gates      = phi(cross_attn(e_anl0, patch_embed(F)))        -> w1, w2, w3 (K each)
    F_k        = sigmoid(w_k) * F                                k = 1, 2, 3
    F_hat_k    = self_attn_block(patch_embed(conv_k(F_k)))
    [anl, seg] = norm([anl, seg] + cross_attn([anl, seg], F_hat_k))
    logits, e_seg_hat = h_c(anl), h_s(seg)

Scales run local to global: 3x3, 7x7, 9x9 with dilation 2.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn

from .errors import ConfigurationError, ContractError, SequencingError
from .layers import MLP, PatchEmbed, attend, attention
from .proposal import ProposalEmbeddings


@dataclass(frozen=True)
class ScaleConfig:
    kernel_size: int
    dilation: int
    index: int

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigurationError(f"scale kernel must be a positive odd integer, got {self.kernel_size}")
        if self.dilation < 1:
            raise ConfigurationError(f"scale dilation must be positive, got {self.dilation}")

    @property
    def receptive_field(self) -> int:
        return self.dilation * (self.kernel_size - 1) + 1


DEFAULT_SCALES = (ScaleConfig(3, 1, 1), ScaleConfig(7, 1, 2), ScaleConfig(9, 2, 3))


@dataclass
class Toggles:
    use_frm: bool = True
    use_fg: bool = True
    use_esm: bool = True
    use_pg: bool = True


@dataclass
class RectifierState:
    e_anl: torch.Tensor
    e_seg: torch.Tensor
    k: int = 0


@dataclass
class RectifierOutput:
    logits: torch.Tensor  # B x 2 (authentic, manipulated)
    e_seg_hat: torch.Tensor  # B x d
    gates: tuple[torch.Tensor, ...] | None = field(default=None, repr=False)


def gate_features(F: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
    """Channel gating ``sigmoid(w[c]) * F[:, c]``; ``w`` is ``K`` or ``B x K``."""
    if w.ndim == 1:
        w = w.unsqueeze(0)
    return torch.sigmoid(w)[:, :, None, None] * F


class ScaleBranch(nn.Module):
    def __init__(self, cfg: ScaleConfig, channels: int, d: int, d_conv: int, patch: int, heads: int):
        super().__init__()
        self.cfg = cfg
        pad = cfg.dilation * (cfg.kernel_size - 1) // 2
        self.conv = nn.Conv2d(
            channels, d_conv, cfg.kernel_size, dilation=cfg.dilation, padding=pad, padding_mode="reflect"
        )
        self.embed = PatchEmbed(d_conv, d, patch)
        self.norm = nn.LayerNorm(d)
        self.msa = attention(heads, d)

    def forward(self, Fk: torch.Tensor) -> torch.Tensor:
        t, _ = self.embed(self.conv(Fk))
        n = self.norm(t)
        return t + attend(self.msa, n, n, n)


class CrossBlock(nn.Module):
    """Joint update of the ``[anl, seg]`` query pair against forensic tokens."""

    def __init__(self, d: int, heads: int, residual_norm: bool = True):
        super().__init__()
        self.attn = attention(heads, d)
        self.norm = nn.LayerNorm(d)
        self.residual_norm = residual_norm

    def forward(self, q: torch.Tensor, kv: torch.Tensor) -> torch.Tensor:
        out = attend(self.attn, q, kv, kv)
        return self.norm(q + out) if self.residual_norm else out


class Rectifier(nn.Module):
    def __init__(
        self,
        channels: int,
        d: int = 256,
        patch: int = 8,
        heads: int = 8,
        scales: tuple[ScaleConfig, ...] = DEFAULT_SCALES,
        d_conv: int | None = None,
        residual_norm: bool = True,
    ):
        super().__init__()
        self.channels = channels
        self.d = d
        self.scales = tuple(scales)
        d_conv = d if d_conv is None else d_conv
        # feature gating
        self.gate_embed = PatchEmbed(channels, d, patch)
        self.gate_attn = attention(heads, d)
        self.phi = MLP([d, d, len(self.scales) * channels])
        # multi-scale rectification
        self.branches = nn.ModuleList(ScaleBranch(s, channels, d, d_conv, patch, heads) for s in self.scales)
        self.cross = nn.ModuleList(CrossBlock(d, heads, residual_norm) for _ in self.scales)
        # heads
        self.cls_head = nn.Linear(d, 2)
        self.seg_head = MLP([d, d, d])

    def compute_gates(self, e_anl0: torch.Tensor, F: torch.Tensor) -> tuple[torch.Tensor, ...]:
        if e_anl0.shape[-1] != self.d:
            raise ContractError(f"analysis embedding has width {e_anl0.shape[-1]}, expected {self.d}")
        if F.shape[1] != self.channels:
            raise ContractError(f"feature map has {F.shape[1]} channels, expected {self.channels}")
        tokens, _ = self.gate_embed(F)
        q = e_anl0.reshape(-1, 1, self.d)
        attended = attend(self.gate_attn, q, tokens, tokens)[:, 0]
        return tuple(self.phi(attended).split(self.channels, dim=-1))

    gate_features = staticmethod(gate_features)

    def _branch_for(self, cfg: ScaleConfig | int) -> ScaleBranch:
        if isinstance(cfg, int):
            if not 1 <= cfg <= len(self.branches):
                raise ConfigurationError(f"no scale with index {cfg}")
            return self.branches[cfg - 1]
        for b in self.branches:
            if b.cfg == cfg:
                return b
        raise ConfigurationError(f"scale {cfg} is not configured")

    def refine_scale(self, Fk: torch.Tensor, cfg: ScaleConfig | int) -> torch.Tensor:
        return self._branch_for(cfg)(Fk)

    def rectify_embeddings(self, state: RectifierState, F_hat: torch.Tensor) -> RectifierState:
        if state.k >= len(self.cross):
            raise SequencingError(f"rectification already completed all {len(self.cross)} scales")
        q = torch.stack([state.e_anl, state.e_seg], dim=1)
        out = self.cross[state.k](q, F_hat)
        return RectifierState(out[:, 0], out[:, 1], state.k + 1)

    def heads(self, e_anl: torch.Tensor, e_seg: torch.Tensor) -> RectifierOutput:
        return RectifierOutput(self.cls_head(e_anl), self.seg_head(e_seg))

    def project_heads(self, state: RectifierState) -> RectifierOutput:
        if state.k != len(self.cross):
            raise SequencingError(f"heads need state at k={len(self.cross)}, got k={state.k}")
        return self.heads(state.e_anl, state.e_seg)

    def forward(self, e0: ProposalEmbeddings, F: torch.Tensor, toggles: Toggles | None = None) -> RectifierOutput:
        toggles = toggles or Toggles()
        if not toggles.use_frm:
            return self.heads(e0.e_anl, e0.e_seg)
        if toggles.use_fg:
            gates = self.compute_gates(e0.e_anl, F)
            gated = [gate_features(F, w) for w in gates]
        else:
            gates = None
            gated = [F] * len(self.scales)
        state = RectifierState(e0.e_anl, e0.e_seg, 0)
        for cfg, Fk in zip(self.scales, gated):
            state = self.rectify_embeddings(state, self.refine_scale(Fk, cfg))
        out = self.project_heads(state)
        out.gates = gates
        return out
