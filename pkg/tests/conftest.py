import numpy as np
import pytest
import torch

from semdyn import synthworld as sw

torch.set_num_threads(1)

ACCEPTANCE_LINES = []


def record_acceptance(name: str, passed: bool, detail: str = "") -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] {name}" + (f": {detail}" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def small_splits():
    """Tiny default-world splits for fast smoke tests."""
    return sw.make_splits(n_train=8, n_test=4, seed=3)
