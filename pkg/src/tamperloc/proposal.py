"""Proposal backends producing the analysis / segmentation embeddings.

A backend maps ``(image, prompt)`` to two ``d``-dim vectors taken at the
positions of the ``<ANL>`` and ``<SEG>`` tokens. The toy backend is a small
trainable network; the external backend shells out to a plugin process.
"""
from __future__ import annotations

import json
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import torch
import torch.nn as nn

from .errors import BackendError, ConfigurationError, ContractError, InputError, TamperlocError
from .images import as_batch, save_rgb, to_numpy
from .layers import attend, attention, sinusoidal_pe_2d

MAX_PROMPT_CHARS = 4096
DEFAULT_PROMPT = "Is this image manipulated? <ANL> Locate the tampered region. <SEG>"


@dataclass
class ProposalEmbeddings:
    e_anl: torch.Tensor  # B x d
    e_seg: torch.Tensor  # B x d
    prompt: str = ""

    @property
    def d(self) -> int:
        return self.e_anl.shape[-1]


@dataclass
class BackendSpec:
    name: str = "toy"
    seed: int = 0
    d: int = 256
    options: dict[str, Any] = field(default_factory=dict)


def _check_prompt(prompt: str) -> str:
    if not isinstance(prompt, str):
        raise InputError("prompt must be a string")
    if len(prompt) > MAX_PROMPT_CHARS:
        raise InputError(f"prompt longer than {MAX_PROMPT_CHARS} characters")
    return prompt


class ToyBackend(nn.Module):
    """Strided conv encoder to a token grid, read out by two learned queries.

    The prompt is accepted but not used.
    """

    def __init__(self, d: int = 256, width: int = 16, heads: int = 8):
        super().__init__()
        self.d = d
        chans = [3, width, 2 * width, 4 * width, d]
        blocks: list[nn.Module] = []
        for i in range(4):
            blocks += [nn.Conv2d(chans[i], chans[i + 1], 3, stride=2, padding=1), nn.GELU()]
        self.encoder = nn.Sequential(*blocks[:-1])
        self.queries = nn.Parameter(torch.randn(2, d) * 0.02)
        self.attn = attention(heads, d)
        self.norm = nn.LayerNorm(d)

    def forward(self, images: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        grid = self.encoder(images)
        gh, gw = grid.shape[-2:]
        tokens = grid.flatten(2).transpose(1, 2) + sinusoidal_pe_2d(gh, gw, self.d, grid.dtype, grid.device)
        q = self.queries.to(tokens.dtype).unsqueeze(0).expand(images.shape[0], -1, -1)
        out = self.norm(q + attend(self.attn, q, tokens, tokens))
        return out[:, 0], out[:, 1]

    def generate(self, images: torch.Tensor, prompt: str = "") -> ProposalEmbeddings:
        e_anl, e_seg = self(images)
        return ProposalEmbeddings(e_anl, e_seg, prompt)

    def trainable_parameters(self) -> list[nn.Parameter]:
        return [p for p in self.parameters() if p.requires_grad]


class ExternalBackend(nn.Module):
    """Frozen backend served by a plugin executable.

    The plugin is invoked as ``command... <image.png> <prompt>`` and must print
    a JSON array pair ``[[e_anl...], [e_seg...]]`` on stdout.
    """

    def __init__(self, command: list[str], d: int = 256, timeout: float = 300.0):
        super().__init__()
        if not command:
            raise ConfigurationError("external backend needs a 'command' option")
        self.command = list(command)
        self.d = d
        self.timeout = timeout

    def _one(self, image: torch.Tensor, prompt: str) -> tuple[list[float], list[float]]:
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "image.png"
            save_rgb(to_numpy(image), path)
            try:
                proc = subprocess.run(
                    [*self.command, str(path), prompt],
                    capture_output=True, text=True, timeout=self.timeout, check=True,
                )
                pair = json.loads(proc.stdout)
            except (OSError, subprocess.SubprocessError, json.JSONDecodeError) as exc:
                raise BackendError(f"external backend failed: {exc}") from exc
        if not (isinstance(pair, list) and len(pair) == 2):
            raise ContractError("external backend must return a JSON array pair")
        return pair[0], pair[1]

    @torch.no_grad()
    def forward(self, images: torch.Tensor, prompt: str = "") -> tuple[torch.Tensor, torch.Tensor]:
        rows = [self._one(img, prompt) for img in images]
        e_anl = torch.tensor([r[0] for r in rows], dtype=images.dtype)
        e_seg = torch.tensor([r[1] for r in rows], dtype=images.dtype)
        return e_anl, e_seg

    def generate(self, images: torch.Tensor, prompt: str = "") -> ProposalEmbeddings:
        e_anl, e_seg = self(images, prompt)
        return ProposalEmbeddings(e_anl, e_seg, prompt)

    def trainable_parameters(self) -> list[nn.Parameter]:
        return []


def _make_toy(spec: BackendSpec) -> ToyBackend:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(spec.seed)
        return ToyBackend(spec.d, **spec.options)


def _make_external(spec: BackendSpec) -> ExternalBackend:
    opts = dict(spec.options)
    return ExternalBackend(opts.pop("command", []), spec.d, **opts)


BACKENDS: dict[str, Callable[[BackendSpec], nn.Module]] = {
    "toy": _make_toy,
    "external": _make_external,
}


def register_backend(name: str, factory: Callable[[BackendSpec], nn.Module]) -> None:
    BACKENDS[name] = factory


def load_backend(spec: BackendSpec | dict) -> nn.Module:
    if isinstance(spec, dict):
        spec = BackendSpec(**spec)
    try:
        factory = BACKENDS[spec.name]
    except KeyError:
        raise ConfigurationError(f"unknown proposal backend {spec.name!r}; registered: {sorted(BACKENDS)}") from None
    return factory(spec)


def generate_proposal(backend: nn.Module, image, prompt: str = DEFAULT_PROMPT, d: int | None = None) -> ProposalEmbeddings:
    """Embeddings at the two special-token positions for ``image`` (HWC array or tensor)."""
    prompt = _check_prompt(prompt)
    images = as_batch(image)
    try:
        out = backend.generate(images, prompt)
    except TamperlocError:
        raise
    except Exception as exc:  # noqa: BLE001 - anything from a backend becomes a BackendError
        raise BackendError(f"{type(backend).__name__} failed: {exc}") from exc
    want = d if d is not None else getattr(backend, "d", out.d)
    if out.e_anl.shape[-1] != want or out.e_seg.shape[-1] != want:
        raise ContractError(f"backend returned width {out.e_anl.shape[-1]}/{out.e_seg.shape[-1]}, configured d={want}")
    if not (torch.isfinite(out.e_anl).all() and torch.isfinite(out.e_seg).all()):
        raise ContractError("backend returned non-finite embeddings")
    return out
