import numpy as np
import pytest

import abipnn.train as _train

_original_backward = _train.backward
BACKWARD_CALLS = {"n": 0, "mismatches": 0}
CRITERIA: dict[int, tuple[bool, str]] = {}


def _checked_backward(*args, **kwargs):
    grads = _original_backward(*args, **kwargs)
    BACKWARD_CALLS["n"] += 1
    for db, d in zip(grads.d_biases, grads.deltas):
        if db.shape != d.shape or db.tobytes() != d.tobytes():
            BACKWARD_CALLS["mismatches"] += 1
            raise AssertionError("bias gradient differs from local gradient")
    return grads


# every backward call in the suite (including inside train()) checks bias == delta bit-for-bit
_train.backward = _checked_backward


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def criterion(request):
    """Record a PASS/FAIL line for an acceptance criterion: ``criterion(n, ok, detail)``."""

    def record(number: int, ok: bool, detail: str) -> bool:
        CRITERIA[number] = (bool(ok), detail)
        return bool(ok)

    return record


def pytest_collection_modifyitems(items):
    # tests marked run_last observe the whole session (e.g. every backward call)
    items.sort(key=lambda item: item.get_closest_marker("run_last") is not None)


def pytest_configure(config):
    config.addinivalue_line("markers", "run_last: run after every other test in the session")
    config.addinivalue_line("markers", "slow: multi-minute experiment")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        ok, detail = CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
