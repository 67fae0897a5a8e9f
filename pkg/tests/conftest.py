import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ridgeproto.synthdata import SynthConfig, generate, load_embeddings  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """16x16 corpus, 12 images per class; quick to build and sample."""
    root = tmp_path_factory.mktemp("small")
    index = generate(SynthConfig(image_size=16, images_per_class=12, seed=7), root)
    return index, load_embeddings(root / "attributes.txt")


@pytest.fixture(scope="session")
def desk_dataset(tmp_path_factory):
    """Default 32x32 corpus used by training-level tests."""
    root = tmp_path_factory.mktemp("desk")
    index = generate(SynthConfig(), root)
    return index, load_embeddings(root / "attributes.txt")


DESK_SEEDS = (0, 1, 2, 3, 4)


@pytest.fixture(scope="session")
def desk_runs(desk_dataset, tmp_path_factory):
    """Desk-profile training for every seed, with and without the attribute injector.

    Returns ``{seed: {mode: (checkpoint, report, seconds, path)}}``.
    """
    import time

    from ridgeproto.trainer import desk_profile, run

    index, attrs = desk_dataset
    out_dir = tmp_path_factory.mktemp("runs")
    runs = {}
    for seed in DESK_SEEDS:
        runs[seed] = {}
        for mode in ("ridge", "mean"):
            path = out_dir / f"{mode}_{seed}.stf"
            cfg = desk_profile(seed=seed, prototype_mode=mode, checkpoint=str(path))
            start = time.perf_counter()
            ckpt, report = run(cfg, index, attrs)
            runs[seed][mode] = (ckpt, report, time.perf_counter() - start, path)
    return runs


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report_criterion():
    """Record and print one pass/fail line for an acceptance criterion."""

    def record(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line, flush=True)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
