import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cala import SessionSchedule, SyntheticSpec, make_synthetic, split_sessions  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_synthetic():
    """8 base + 4 novel classes in 6 dimensions; quick enough for training tests."""
    spec = SyntheticSpec(dim=6, base_classes=8, novel_classes=4, per_class_train=20, per_class_test=10, seed=3)
    return make_synthetic(spec)


@pytest.fixture(scope="session")
def small_stream(small_synthetic):
    return split_sessions(small_synthetic, SessionSchedule(8, 2, 2, 3), seed=5)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
