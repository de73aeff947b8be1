import os
from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

REPO = Path(__file__).resolve().parents[1]
DATA_DIR = Path(os.environ.get("RECBENCH_DATA", REPO / "data"))


def random_binary(n_users, n_items, density=0.3, seed=0, min_per_row=1):
    "Binary CSR matrix where every row and column has at least one entry."
    rng = np.random.default_rng(seed)
    dense = rng.random((n_users, n_items)) < density
    for u in range(n_users):
        if dense[u].sum() < min_per_row:
            dense[u, rng.choice(n_items, min_per_row, replace=False)] = True
    for i in range(n_items):
        if not dense[:, i].any():
            dense[rng.integers(n_users), i] = True
    return sp.csr_matrix(dense.astype(np.float64))


@pytest.fixture
def toy():
    return random_binary(30, 12, density=0.35, seed=3, min_per_row=2)


@pytest.fixture
def small():
    return random_binary(60, 40, density=0.15, seed=11, min_per_row=3)


#: (criterion, passed, detail) lines recorded by the acceptance suite
ACCEPTANCE: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in sorted(ACCEPTANCE, key=lambda t: int(t[0].split()[0])):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
