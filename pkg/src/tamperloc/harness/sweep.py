"""Pixel-AUC robustness curves under the perturbation suite."""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

from ..datakit.perturb import FORMULAS, PerturbationSpec, perturb, unsupported_kinds
from ..datakit.synth import Sample
from ..errors import UnsupportedPerturbation
from .evaluate import Detector, evaluate_detector


def perturb_samples(samples: Sequence[Sample], kind: str, severity: int, seed: int = 0) -> list[Sample]:
    return [
        Sample(perturb(s.image, PerturbationSpec(kind, severity, seed + i)), s.mask, s.label, s.provenance)
        for i, s in enumerate(samples)
    ]


def robustness_sweep(
    detector: Detector,
    samples: Sequence[Sample],
    kinds: Sequence[str],
    severities: Sequence[int],
    out_dir: str | Path | None = None,
    seed: int = 0,
) -> list[dict]:
    """Rows ``{kind, severity, auc}``; with ``out_dir``, also ``robustness.csv`` and one PNG chart per kind."""
    missing = unsupported_kinds(kinds)
    if missing:
        raise UnsupportedPerturbation(f"unsupported perturbation kinds: {missing}")
    for k in kinds:
        for s in severities:
            PerturbationSpec(k, s)
    rows = []
    for kind in kinds:
        for sev in severities:
            report = evaluate_detector(detector, perturb_samples(samples, kind, sev, seed))
            rows.append({"kind": kind, "severity": int(sev), "auc": report.avg["pixel_auc"]})
    if out_dir is not None:
        write_outputs(rows, kinds, Path(out_dir))
    return rows


def write_outputs(rows: list[dict], kinds: Sequence[str], out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "robustness.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["kind", "severity", "auc"])
        writer.writeheader()
        writer.writerows(rows)
    (out / "perturbations.json").write_text(json.dumps({k: FORMULAS[k] for k in kinds}, indent=2))

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    for kind in kinds:
        pts = [(r["severity"], r["auc"]) for r in rows if r["kind"] == kind and r["auc"] is not None]
        fig, ax = plt.subplots(figsize=(4, 3))
        if pts:
            xs, ys = zip(*pts)
            ax.plot(xs, ys, marker="o")
        ax.set_xlabel("severity")
        ax.set_ylabel("pixel AUC")
        ax.set_ylim(0, 1)
        ax.set_title(f"{kind}: {FORMULAS[kind]}", fontsize=7)
        fig.tight_layout()
        fig.savefig(out / f"robustness_{kind}.png", dpi=100)
        plt.close(fig)
