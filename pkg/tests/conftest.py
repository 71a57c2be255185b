import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)
    yield


def tiny_config(**overrides):
    """A fast pipeline configuration for unit tests."""
    from tamperloc.harness.config import RunConfig

    raw = dict(d=16, c=16, patch=8, heads=8, d_conv=8, noise_width=4, batch_size=4, epochs=2,
               warmup_steps=2, validate_every=1, max_steps=None)
    raw.update(overrides)
    return RunConfig.from_dict(raw)


@pytest.fixture
def tiny_cfg():
    return tiny_config()


@pytest.fixture(scope="session")
def tiny_samples():
    from tamperloc.datakit import generate

    kinds = ("splice", "copymove", "inpaint", "authentic")
    return [generate(kinds[i % 4], 50 + i, 32) for i in range(8)]


CRITERIA = {
    1: "filter oracle equivalence",
    2: "Bayar constraint durability",
    3: "gradient fidelity",
    4: "amplification bounds",
    5: "metric oracles",
    6: "overfit smoke",
    7: "ablation structure",
    8: "robustness harness",
    9: "reproducibility",
    10: "CLI round-trip",
}
_criterion_results: dict[int, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number covered by the test")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if call.when == "call" or (call.when == "setup" and call.excinfo is not None):
        outcome = "passed" if call.excinfo is None else "failed"
        _criterion_results.setdefault(marker.args[0], []).append(outcome)


def pytest_terminal_summary(terminalreporter):
    if not _criterion_results:
        return
    terminalreporter.section("acceptance criteria")
    for n, name in CRITERIA.items():
        outcomes = _criterion_results.get(n)
        if outcomes is None:
            status = "NOT RUN"
        else:
            status = "PASS" if all(o == "passed" for o in outcomes) else "FAIL"
        terminalreporter.write_line(f"[{status}] {n:2d}. {name}")
