from .manifest import ManifestRow, load_samples, read_manifest, save_samples, write_manifest
from .perturb import KINDS as PERTURBATIONS, PerturbationSpec, perturb
from .synth import (
    Sample,
    authentic_sample,
    generate,
    self_blend,
    synth_authentic,
    synth_copy_move,
    synth_inpaint,
    synth_splice,
)

__all__ = [
    "ManifestRow", "PERTURBATIONS", "PerturbationSpec", "Sample", "authentic_sample", "generate",
    "load_samples", "perturb", "read_manifest", "save_samples", "self_blend", "synth_authentic",
    "synth_copy_move", "synth_inpaint", "synth_splice", "write_manifest",
]
