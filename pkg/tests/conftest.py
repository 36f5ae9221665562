from __future__ import annotations

import numpy as np
import pytest

from mmrisk import example_model
from mmrisk.montecarlo import SimConfig, simulate_passage
from randmodels import RANDOM_SEEDS, random_model

# levels whose first passage is recorded in the shared example-model run
SHARED_LEVELS = (0.0, 0.5, 1.0, 2.0, 5.0)
SHARED_PATHS = 1_000_000


@pytest.fixture(scope="session")
def example():
    return example_model()


@pytest.fixture(scope="session")
def random_models():
    return [random_model(s) for s in RANDOM_SEEDS]


@pytest.fixture(scope="session")
def example_runs(example):
    """One 10^6-path run per initial state: level passages plus all-time suprema."""
    cfg = SimConfig(seed=42, n_paths=SHARED_PATHS, t_max=500.0)
    return [simulate_passage(example, i, SHARED_LEVELS, cfg, track_sup=True) for i in range(example.m)]


def within_se(estimate: float, truth: float, n: int, k: float = 3.0) -> bool:
    """Binomial check with the SE of the estimate (analytic SE when the sample is degenerate)."""
    p = estimate if 0 < estimate < 1 else truth
    se = np.sqrt(max(p * (1 - p), 1e-300) / n)
    return abs(estimate - truth) < k * se


# acceptance summary ---------------------------------------------------------

ACCEPTANCE: dict[int, tuple[str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        status, text = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {status}  {text}")
