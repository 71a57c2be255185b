"""The full detector: proposal -> forensic features -> rectification -> enhanced segmentation."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from ..filterbank import FilterBank
from ..proposal import BackendSpec, ProposalEmbeddings, load_backend
from ..rectifier import Rectifier, RectifierOutput, Toggles
from ..segmenter import MaskPrediction, Segmenter
from .config import RunConfig

DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class PipelineOutput:
    logits: torch.Tensor  # B x 2
    mask: MaskPrediction
    rect: RectifierOutput
    proposal: ProposalEmbeddings


class ProposeRectifyNet(nn.Module):
    def __init__(self, cfg: RunConfig):
        super().__init__()
        self.toggles = Toggles(**vars(cfg.toggles))
        self.prompt = cfg.prompt
        self.filterbank = FilterBank(cfg.noise_width)
        spec = BackendSpec(cfg.backend.name, cfg.backend.seed, cfg.d, dict(cfg.backend.options))
        self.backend = load_backend(spec)
        # learned stand-in for the proposal when the proposal generator is ablated
        self.fixed_proposal = nn.Parameter(torch.randn(2, cfg.d) * 0.02)
        self.rectifier = Rectifier(
            FilterBank.num_channels, cfg.d, cfg.patch, cfg.heads, cfg.scale_configs(), cfg.d_conv,
            residual_norm=cfg.residual_norm,
        )
        self.segmenter = Segmenter(FilterBank.num_channels, cfg.d, cfg.c, cfg.heads, cfg.high_res)

    def propose(self, images: torch.Tensor) -> ProposalEmbeddings:
        if self.toggles.use_pg:
            return self.backend.generate(images, self.prompt)
        fixed = self.fixed_proposal.to(images.dtype).unsqueeze(0).expand(images.shape[0], -1, -1)
        return ProposalEmbeddings(fixed[:, 0], fixed[:, 1], self.prompt)

    def forward(self, images: torch.Tensor) -> PipelineOutput:
        e0 = self.propose(images)
        feats = self.filterbank(images)
        rect = self.rectifier(e0, feats, self.toggles)
        mask = self.segmenter(images, feats, rect.e_seg_hat, self.toggles.use_esm)
        return PipelineOutput(rect.logits, mask, rect, e0)

    @torch.no_grad()
    def project_constraints(self) -> None:
        self.filterbank.bayar.project_()

    def disabled_parameters(self) -> dict[str, nn.Parameter]:
        """Parameters that no forward pass touches under the current toggles."""
        t = self.toggles
        prefixes = []
        if t.use_pg:
            prefixes.append("fixed_proposal")
        else:
            prefixes.append("backend.")
        if not t.use_frm:
            prefixes += ["rectifier.gate_", "rectifier.phi", "rectifier.branches", "rectifier.cross"]
        elif not t.use_fg:
            prefixes += ["rectifier.gate_", "rectifier.phi"]
        if not t.use_esm:
            prefixes += ["segmenter.aligner", "segmenter.discrepancy", "segmenter.amplifier"]
        return {n: p for n, p in self.named_parameters() if n.startswith(tuple(prefixes))}


def build_model(cfg: RunConfig) -> ProposeRectifyNet:
    """Deterministic construction: the same config always yields the same weights."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        model = ProposeRectifyNet(cfg)
    return model.to(DTYPES[cfg.dtype])
