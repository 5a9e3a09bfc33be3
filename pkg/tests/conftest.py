import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import strategies as st

from mggcn.data import convert_linqs, convert_planetoid, save_dataset
from mggcn.graph import build_graph

ROOT = Path(__file__).resolve().parents[1]
RAW = ROOT / "data" / "raw"


def p4():
    return build_graph([(0, 1), (1, 2), (2, 3)], 4)


def star(leaves=3):
    return build_graph([(0, i) for i in range(1, leaves + 1)], leaves + 1)


def random_graph(n, p, seed):
    rng = np.random.default_rng(seed)
    upper = np.triu(rng.random((n, n)) < p, k=1)
    return build_graph(list(zip(*np.nonzero(upper))), n)


@st.composite
def graphs(draw, min_nodes=1, max_nodes=12):
    n = draw(st.integers(min_nodes, max_nodes))
    pairs = st.tuples(st.integers(0, n - 1), st.integers(0, n - 1))
    edges = draw(st.lists(pairs, max_size=3 * n))
    return build_graph(edges, n)


def central_diff(f, x, eps=1e-5):
    """Numerical gradient of scalar ``f`` at ``x`` (modified in place, restored)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        up = f()
        x[i] = old - eps
        down = f()
        x[i] = old
        grad[i] = (up - down) / (2 * eps)
    return grad


def rel_err(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8))


@pytest.fixture(scope="session")
def cora_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cora")
    save_dataset(convert_linqs(RAW / "cora", "cora"), out)
    return out


@pytest.fixture(scope="session")
def citeseer_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("citeseer")
    save_dataset(convert_planetoid(RAW / "citeseer", "citeseer"), out)
    return out


ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line per acceptance criterion for the terminal summary."""
    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
