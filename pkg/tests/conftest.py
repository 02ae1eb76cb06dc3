import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gtea.graph import TemporalGraph, build_edge_sequences  # noqa: E402
from gtea.numerics import Tensor  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


def tiny_graph(seed=0, node_dim=3, edge_dim=2, num_classes=2):
    """Four nodes on a path plus a chord; 0 has three neighbors."""
    rng = np.random.default_rng(seed)
    events = []
    for u, v, n in [(0, 1, 3), (0, 2, 2), (1, 2, 1), (0, 3, 4), (2, 3, 2)]:
        for _ in range(n):
            a, b = (u, v) if rng.random() < 0.5 else (v, u)
            events.append((a, b, float(rng.uniform(0, 100)), rng.normal(size=edge_dim)))
    seqs = build_edge_sequences(events)
    labels = np.array([0, 1, 0, 1])
    return TemporalGraph(rng.normal(size=(4, node_dim)), labels, list(seqs.values()), num_classes)


def with_random_scorer(model, seed=0, scale=1.0):
    """Replace the zero-initialized attention vector so scores differ across edges."""
    a = np.random.default_rng(seed).normal(scale=scale, size=model.ma.a.shape)
    return model.with_parameters({"ma.a": Tensor(a.astype(model.ma.a.dtype))})


@pytest.fixture
def graph4():
    return tiny_graph()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
