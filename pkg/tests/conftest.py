import json
from pathlib import Path

import numpy as np
import pytest

from cure.data import Dataset, SyntheticConfig, TaskRecord, make_synthetic
from cure.nn import make_rng

FIXTURES = Path(__file__).parent / "fixtures"


def read_jsonl(path):
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def origin_cluster(seed, n_train=200, n_test=100, dim=8, spread=0.1):
    """Train/test records drawn around the origin."""
    rng = make_rng(1000 + seed)
    x = rng.normal(0.0, spread, size=(n_train + n_test, dim))
    recs = [
        TaskRecord(f"r{i:04d}", x[i], 0, 1, "train" if i < n_train else "test")
        for i in range(n_train + n_test)
    ]
    return Dataset(recs, dim)


def far_points(seed, n=100, dim=8, radius=10.0):
    rng = make_rng(2000 + seed)
    v = rng.normal(size=(n, dim))
    return radius * v / np.linalg.norm(v, axis=1, keepdims=True)


@pytest.fixture(scope="session")
def small_synthetic():
    return make_synthetic(SyntheticConfig(n_train=120, n_test=40, dim=6, seed=3))


@pytest.fixture
def fixtures_dir():
    return FIXTURES


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_RESULTS: dict[int, tuple[str, str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        status, title, detail = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"[{status}] criterion {n:2d}: {title} -- {detail}")
