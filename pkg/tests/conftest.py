import os
from collections import OrderedDict

import numpy as np
import pytest
from hypothesis import settings

from cocgan import tensor as T

settings.register_profile("cocgan", deadline=None, max_examples=40)
settings.load_profile("cocgan")

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")

CRITERIA = OrderedDict(
    [
        (1, "gradient fidelity"),
        (2, "aggregate/dispatch oracle equivalence"),
        (3, "shape ladder"),
        (4, "clustering invariants"),
        (5, "metrics correctness"),
        (6, "WGAN mechanics"),
        (7, "desk-scale training trend"),
        (8, "conditional path"),
        (9, "determinism and persistence"),
        (10, "visualization contract"),
    ]
)
_outcomes = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion exercised by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n = marker.args[0]
    if report.when == "call" or report.failed or report.skipped:
        state = _outcomes.setdefault(n, {"passed": 0, "failed": 0, "skipped": 0})
        if report.failed:
            state["failed"] += 1
        elif report.skipped:
            state["skipped"] += 1
        elif report.when == "call":
            state["passed"] += 1


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in CRITERIA.items():
        state = _outcomes.get(n)
        if state is None:
            verdict = "NOT RUN"
        elif state["failed"]:
            verdict = "FAIL"
        elif state["passed"]:
            verdict = "PASS"
        else:
            verdict = "SKIPPED"
        detail = "" if state is None else f" ({state['passed']} passed, {state['failed']} failed)"
        terminalreporter.write_line(f"criterion {n:>2} {title}: {verdict}{detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def f64():
    with T.default_dtype(np.float64):
        yield


def mnist_paths(split):
    return (
        os.path.join(DATA_DIR, f"mnist5k-{split}-images-idx3-ubyte.gz"),
        os.path.join(DATA_DIR, f"mnist5k-{split}-labels-idx1-ubyte.gz"),
    )
