import numpy as np
import pytest

from fetr.data import generate_synthetic

ACCEPTANCE_LINES = []


def record_acceptance(line: str) -> None:
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def synth_small(tmp_path_factory):
    """A 4-class, 8-per-class, 16x16 synthetic dataset shared by quick tests."""
    root = tmp_path_factory.mktemp("synth_small")
    generate_synthetic(root, num_classes=4, per_class=8, size=16, seed=3)
    return root


@pytest.fixture(scope="session")
def synth_k10(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth_k10")
    manifest = generate_synthetic(root, num_classes=10, per_class=50, size=32, seed=1)
    return root, manifest
