"""End-to-end acceptance checks, one test per criterion.

Run on CPU. A per-criterion PASS/FAIL summary is printed at the end of the
pytest session.
"""
import json
import os
import subprocess
import sys
import time

import numpy as np
import pytest
import torch

from conftest import tiny_config
from oracles import auc_oracle, central_difference, correlate2d, f1_oracle, iou_oracle, rel_err
from tamperloc.datakit import PerturbationSpec, generate, perturb
from tamperloc.datakit.perturb import KINDS as PERTURB_KINDS
from tamperloc.filterbank import LUMA, SOBEL_X, SOBEL_Y, SRM_KERNELS, BayarConv, apply_bayar, apply_sobel, apply_srm, project_bayar
from tamperloc.harness import RunConfig, build_model, evaluate, evaluate_model, model_detector, robustness_sweep, train
from tamperloc.images import to_tensor
from tamperloc.losses import pipeline_loss
from tamperloc.metrics import AVG_KEYS, mask_iou, pixel_auc, pixel_f1
from tamperloc.segmenter import Amplifier

criterion = pytest.mark.criterion


@criterion(1)
def test_filters_match_nested_loop_oracle():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    for _ in range(10):
        img = rng.random((16, 16, 3))
        x = to_tensor(img)  # float32, the production dtype
        srm = apply_srm(x)[0].double().numpy()
        for colour in range(3):
            for k in range(3):
                ref = correlate2d(img[..., colour], SRM_KERNELS[k])
                assert np.abs(srm[3 * colour + k] - ref).max() <= 1e-5

        # drawn like BayarConv's own initialization
        w = project_bayar(torch.as_tensor(rng.random((3, 3, 5, 5))))
        bayar = apply_bayar(w.float(), x)[0].double().numpy()
        w32 = w.float().double().numpy()
        for o in range(3):
            ref = sum(correlate2d(img[..., i], w32[o, i]) for i in range(3))
            assert np.abs(bayar[o] - ref).max() <= 1e-5

        sobel = apply_sobel(x)[0].double().numpy()
        luma = img @ np.asarray(LUMA)
        gx, gy = correlate2d(luma, SOBEL_X), correlate2d(luma, SOBEL_Y)
        assert np.abs(sobel[0] - gx).max() <= 1e-5
        assert np.abs(sobel[1] - gy).max() <= 1e-5
        assert np.abs(sobel[2] - np.hypot(gx, gy)).max() <= 1e-5
    assert time.perf_counter() - start < 10


@criterion(2)
def test_bayar_constraint_survives_training():
    torch.manual_seed(0)
    conv = BayarConv()
    # toy task: recover a randomly drawn constrained filter from its responses
    target = project_bayar(torch.randn(3, 3, 5, 5))
    opt = torch.optim.AdamW(conv.parameters(), lr=1e-2)
    initial = conv.weight.detach().clone()
    losses = []
    for _ in range(100):
        x = torch.rand(4, 3, 32, 32)
        loss = (conv(x) - apply_bayar(target, x)).pow(2).mean()
        losses.append(loss.item())
        opt.zero_grad()
        loss.backward()
        opt.step()
        conv.project_()
    w = conv.weight.detach().reshape(-1, 5, 5)
    assert not torch.allclose(w, initial.reshape(-1, 5, 5))
    assert losses[-1] < losses[0]
    assert torch.all(w[:, 2, 2] == -1.0)
    off_centre = w.sum(dim=(1, 2)) - w[:, 2, 2]
    assert torch.all((off_centre - 1.0).abs() <= 1e-5)


@criterion(3)
def test_composite_loss_gradients_match_finite_differences():
    start = time.perf_counter()
    cfg = tiny_config(d=16, c=16, d_conv=8, noise_width=4, dtype="float64")
    model = build_model(cfg)
    sample = generate("splice", 3)
    x = torch.as_tensor(sample.image.transpose(2, 0, 1)).unsqueeze(0)
    m = torch.tensor(sample.mask, dtype=torch.float64).unsqueeze(0)
    assert x.shape == (1, 3, 64, 64)

    def loss():
        out = model(x)
        return pipeline_loss(out.logits, out.mask.probabilities, [sample.y], m, cfg.loss).total

    model.zero_grad()
    loss().backward()
    groups = ("rectifier.", "segmenter.", "filterbank.noise", "backend.")
    checked = set()
    g = torch.Generator().manual_seed(0)
    failures = []
    for name, p in model.named_parameters():
        if not name.startswith(groups):
            continue
        assert p.grad is not None, name
        v = torch.randn(p.shape, dtype=torch.float64, generator=g)
        analytic = float((p.grad * v).sum())
        numeric = central_difference(loss, p, v)
        if rel_err(analytic, numeric) >= 1e-3:
            failures.append((name, analytic, numeric))
        checked.add(name.split(".")[0] + ("." + name.split(".")[1] if name.startswith("filterbank") else ""))
    assert not failures, failures
    assert checked == {"rectifier", "segmenter", "filterbank.noise", "backend"}
    assert time.perf_counter() - start < 120


@criterion(4)
def test_amplification_ratio_bounds():
    rng = np.random.default_rng(4)
    torch.manual_seed(4)
    for trial in range(1000):
        if trial % 50 == 0:
            amp = Amplifier(8).double()
            with torch.no_grad():
                for p in amp.parameters():
                    p.mul_(float(rng.uniform(0.5, 5.0)))
        E = torch.as_tensor(rng.normal(size=(1, 8, 4, 4)) * 10 ** rng.uniform(-3, 3))
        S = torch.as_tensor(rng.normal(size=(1, 8, 4, 4)) * 10 ** rng.uniform(-1, 1))
        with torch.no_grad():
            E_hat, _ = amp(E, S)
        live = E.abs() > 1e-9
        ratio = E_hat[live] / E[live]
        assert torch.all(ratio > 1) and torch.all(ratio < 4), trial
        assert torch.equal(torch.sign(E_hat), torch.sign(E)), trial


@criterion(5)
def test_metrics_match_brute_force():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        gt = rng.random((8, 8)) < rng.uniform(0.05, 0.95)
        scores = np.round(rng.random((8, 8)), int(rng.integers(1, 4)))  # rounding creates ties
        pred = scores >= 0.5
        assert pixel_f1(pred, gt) == f1_oracle(pred, gt)
        assert mask_iou(pred, gt) == iou_oracle(pred, gt)
        if 0 < gt.sum() < gt.size:
            assert abs(pixel_auc(scores, gt) - auc_oracle(scores, gt)) <= 1e-12


OVERFIT = dict(
    seed=7, d=64, c=32, d_conv=16, batch_size=16, epochs=1000, max_steps=200, warmup_steps=20,
    validate_every=5, optim={"lr": 3e-3},
)


def overfit_samples():
    kinds = ("splice", "copymove", "inpaint", "selfblend")
    return [generate(kind, 100 * j + i) for j, kind in enumerate(kinds) for i in range(4)]


@criterion(6)
def test_overfit_sixteen_samples():
    start = time.perf_counter()
    samples = overfit_samples()
    cfg = RunConfig.from_dict(OVERFIT)
    result = train(cfg, samples)
    assert result.last.step <= 200
    report = evaluate(result.checkpoint, samples)
    elapsed = time.perf_counter() - start
    print(f"overfit: pixel_f1={report.avg['pixel_f1']:.4f} image_acc={report.avg['image_acc']:.3f} "
          f"auc={report.avg['pixel_auc']:.4f} step={result.checkpoint.step} time={elapsed:.0f}s")
    assert report.avg["pixel_f1"] >= 0.90
    assert report.avg["image_acc"] == 1.0
    assert elapsed < 600
    rows = robustness_sweep(model_detector(result.checkpoint.build()), samples, ["brightness"], [0])
    assert rows[0]["auc"] >= 0.95


@criterion(7)
@pytest.mark.parametrize("toggle", ["use_frm", "use_fg", "use_esm", "use_pg"])
def test_ablation_disabled_modules_frozen(toggle):
    samples = [generate(k, 70 + i, 32) for i, k in enumerate(["splice", "copymove", "inpaint", "authentic"] * 2)]
    cfg = tiny_config(max_steps=3, toggles={toggle: False})
    model = build_model(cfg)
    frozen = {n: p.detach().clone() for n, p in model.disabled_parameters().items()}
    assert frozen
    active = {n: p.detach().clone() for n, p in model.named_parameters() if n not in frozen}
    result = train(cfg, samples, model=model)
    assert result.last.step == 3
    for n, p in model.named_parameters():
        if n in frozen:
            assert torch.equal(p.detach(), frozen[n]), n
    assert any(not torch.equal(p.detach(), active[n]) for n, p in model.named_parameters() if n in active)
    report = evaluate_model(model, samples)
    assert set(AVG_KEYS) <= set(report.avg)


@criterion(8)
def test_robustness_identity_and_determinism():
    samples = [generate(k, 30 + i, 32) for i, k in enumerate(["splice", "copymove", "inpaint", "selfblend"])]
    detector = model_detector(build_model(tiny_config()))
    clean = evaluate_model(build_model(tiny_config()), samples).avg["pixel_auc"]
    rows = robustness_sweep(detector, samples, PERTURB_KINDS, [0, 2], seed=3)
    again = robustness_sweep(detector, samples, PERTURB_KINDS, [0, 2], seed=3)
    assert rows == again
    assert {r["kind"] for r in rows} == set(PERTURB_KINDS)
    for r in rows:
        if r["severity"] == 0:
            assert abs(r["auc"] - clean) <= 1e-9, r
    img = samples[0].image
    for kind in PERTURB_KINDS:
        for sev in range(1, 6):
            a = perturb(img, PerturbationSpec(kind, sev, 11))
            b = perturb(img, PerturbationSpec(kind, sev, 11))
            assert np.array_equal(a, b), (kind, sev)


@criterion(9)
def test_train_eval_reproducible():
    samples = [generate(k, 90 + i, 32) for i, k in enumerate(["splice", "copymove", "selfblend", "authentic"] * 2)]
    reports = []
    for _ in range(2):
        result = train(tiny_config(max_steps=4), samples)
        reports.append(evaluate(result.checkpoint, samples).to_json())
    assert reports[0] == reports[1]


def _run(*args, cwd):
    env = dict(os.environ, PYTHONHASHSEED="0")
    proc = subprocess.run([sys.executable, "-m", "tamperloc", *args], cwd=cwd, env=env, capture_output=True, text=True)
    assert proc.returncode == 0, (args, proc.stdout, proc.stderr)
    return proc.stdout


@criterion(10)
def test_cli_round_trip(tmp_path):
    _run("synth", "--kind", "splice,copymove,inpaint,selfblend", "--n", "4", "--seed", "1", "--size", "32",
         "--out", "data", cwd=tmp_path)
    cfg = tiny_config(max_steps=2).to_dict()
    cfg["data"] = {"train_manifest": "data/manifest.jsonl", "val_manifest": None, "out_dir": "run"}
    (tmp_path / "config.json").write_text(json.dumps(cfg))
    _run("train", "--config", "config.json", cwd=tmp_path)
    _run("eval", "--ckpt", "run/best.ckpt", "--manifest", "data/manifest.jsonl", "--out", "metrics.json", cwd=tmp_path)
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert {"pixel_f1", "pixel_iou", "pixel_auc", "image_f1", "image_acc"} <= set(metrics["avg"])
    _run("infer", "--ckpt", "run/best.ckpt", "--image", "data/images/sample_00000.png", "--out", "pred", cwd=tmp_path)
    assert (tmp_path / "pred" / "verdict.json").exists() and (tmp_path / "pred" / "mask.png").exists()
    _run("perturb-sweep", "--ckpt", "run/best.ckpt", "--manifest", "data/manifest.jsonl", "--kinds",
         "brightness,jpeg2000", "--severities", "0,1", "--out", "sweep", cwd=tmp_path)
    assert (tmp_path / "sweep" / "robustness.csv").read_text().count("\n") == 5
