import numpy as np
import pytest

from laplora.datasets import SyntheticSpec, generate
from laplora.graph import GraphDataset

# criterion number -> (passed, description, detail); filled by test_acceptance
ACCEPTANCE = {}
# supplementary evidence lines that are not acceptance criteria themselves
SUPPLEMENTARY = []


def make_dataset(n, edges, features=None, labels=None, masks=None, name="g"):
    features = np.zeros((n, 1)) if features is None else features
    labels = np.zeros(n, dtype=int) if labels is None else labels
    if masks is None:
        masks = (np.ones(n, bool), np.zeros(n, bool), np.zeros(n, bool))
    return GraphDataset(n, np.asarray(edges, dtype=int).reshape(-1, 2), features, labels, *masks, name=name)


@pytest.fixture
def k2():
    return make_dataset(2, [(0, 1)])


@pytest.fixture
def k3():
    return make_dataset(3, [(0, 1), (1, 2), (0, 2)])


@pytest.fixture
def two_cliques():
    return generate(SyntheticSpec("two_cliques", 10))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE and not SUPPLEMENTARY:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, desc, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {num}: {desc} -- {detail}")
    for ok, desc, detail in SUPPLEMENTARY:
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] supplementary: {desc} -- {detail}")
