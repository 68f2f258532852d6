"""Shared fixtures and independent oracles.

The dense oracle here deliberately avoids the package's path-walk code: it
assembles the reduced weighted Laplacian from the raw line list with plain
loops and inverts it with numpy.
"""

import numpy as np
import pytest

from gridforest.network import Line, Node, build_forest
from gridforest.synth import FeederSpec, draw_injections, synth_layout


def dense_path_matrix(forest, kind: str) -> np.ndarray:
    """Oracle: inverse of the reduced weighted Laplacian, built from lines."""
    loads = forest.load_ids
    pos = {i: k for k, i in enumerate(loads)}
    lap = np.zeros((len(loads), len(loads)))
    for ln in forest.lines:
        if ln.status != "operational":
            continue
        w = 1.0 / (ln.r if kind == "r" else ln.x)
        for u, v in ((ln.a, ln.b),):
            iu = pos.get(u)
            iv = pos.get(v)
            if iu is not None:
                lap[iu, iu] += w
            if iv is not None:
                lap[iv, iv] += w
            if iu is not None and iv is not None:
                lap[iu, iv] -= w
                lap[iv, iu] -= w
    return np.linalg.inv(lap)


@pytest.fixture
def chain4():
    """0(sub) - 1 - 2 - 3 with r = (1, 2, 1), x = (1, 2, 1)."""
    nodes = [Node(0, "substation")] + [Node(i, "load") for i in (1, 2, 3)]
    lines = [
        Line(1, 0, r=1.0, x=1.0),
        Line(2, 1, r=2.0, x=2.0),
        Line(3, 2, r=1.0, x=1.0),
    ]
    return build_forest(nodes, lines)


@pytest.fixture
def branch_layout():
    """Slack 0 feeding e; e feeds b and d; b feeds a.

    ids: 0 = slack, 5 = e, 4 = b, 3 = d, 1 = a.
    """
    nodes = [Node(0, "substation")] + [Node(i, "load") for i in (1, 3, 4, 5)]
    lines = [
        Line(5, 0, r=0.5, x=0.7),
        Line(4, 5, r=0.3, x=0.4),
        Line(3, 5, r=0.2, x=0.9),
        Line(1, 4, r=0.8, x=0.6),
    ]
    return build_forest(nodes, lines)


def random_feeder(seed, n_range=(2, 50), k_max=5, extra=10):
    """Deterministic random feeder + injections for property suites."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(*n_range))
    k = int(rng.integers(1, min(n, k_max) + 1))
    cap = max((n + k) * (n + k - 1) // 2 - n, 0)
    spec = FeederSpec(
        n_loads=n, n_trees=k, extra_lines=min(int(rng.integers(0, extra)), cap)
    )
    forest = synth_layout(spec, int(rng.integers(2**31)))
    inj = draw_injections(spec, forest.load_ids, int(rng.integers(2**31)))
    return forest, inj
