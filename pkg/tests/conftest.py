import numpy as np
import pytest

from plapf.graph import Graph
from plapf.synthetic import path_graph, random_graph

ACCEPTANCE_LINES = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.skipped):
        status = "PASS" if report.passed else "SKIP" if report.skipped else "FAIL"
        detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
        if hasattr(report, "wasxfail"):
            # known, documented miss: the criterion is reported as failed
            status = "FAIL"
            detail = f"{detail}; known: {report.wasxfail}" if report.skipped else "unexpectedly passed"
        elif report.skipped and isinstance(report.longrepr, tuple):
            detail = report.longrepr[2]
        ACCEPTANCE_LINES.append(f"{status:4} {marker.args[0]}" + (f" ({detail})" if detail else ""))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def path2():
    return path_graph(2)


@pytest.fixture
def triangle():
    return Graph(3, [0, 1, 0], [1, 2, 2])


@pytest.fixture
def small_graph():
    return random_graph(20, 0.2, seed=4, weighted=True)


def dense_laplacian(g):
    """I - D^{-1/2} W D^{-1/2} straight from the definition, zero rows for isolated nodes."""
    W = g.weights.toarray()
    d = W.sum(axis=1)
    L = np.zeros_like(W)
    for i in range(g.n_nodes):
        for j in range(g.n_nodes):
            if d[i] > 0 and d[j] > 0:
                L[i, j] = (1.0 if i == j else 0.0) - W[i, j] / np.sqrt(d[i] * d[j])
    return L
