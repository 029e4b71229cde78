import os

import numpy as np
import pytest
from hypothesis import settings

from cel.dataset import BlobSpec, LabeledDataset, generate_blobs

settings.register_profile("default", deadline=None, max_examples=60)
settings.register_profile("ci", deadline=None, max_examples=200)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def blobs4():
    spec = BlobSpec(num_classes=4, per_class_count=40, feature_dim=3, overlap_pairs=[(0, 3)], seed=5)
    return generate_blobs(spec)


@pytest.fixture
def tiny_ds():
    X = np.array([[0.0, 1.0], [1.0, 0.0], [0.5, 0.5], [2.0, 2.0], [-1.0, 0.0], [0.0, -1.0]])
    y = np.array([0, 1, 0, 1, 2, 2])
    return LabeledDataset(X, y, 3)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(tag: str, ok: bool, detail: str) -> bool:
        line = f"{tag} {'PASS' if ok else 'FAIL'}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
