from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from layerlink import Mode, ModelParams, MultilayerGraph

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


def random_instance(seed: int, n=None, n_layers=None, k=None, directed=None,
                    diagonal=None, loops=None, density=None, holdout_frac=0.0):
    """Small random graph, strictly positive params and an optional holdout."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 9)) if n is None else n
    L = int(rng.integers(1, 4)) if n_layers is None else n_layers
    K = int(rng.integers(1, 4)) if k is None else k
    directed = bool(rng.integers(2)) if directed is None else directed
    diagonal = bool(rng.integers(2)) if diagonal is None else diagonal
    loops = bool(rng.integers(2)) if loops is None else loops
    density = rng.uniform(0.2, 1.2) if density is None else density
    A = rng.poisson(density, size=(L, n, n))
    if not directed:
        A = np.triu(A) + np.triu(A, 1).transpose(0, 2, 1)
    if not loops:
        for a in range(L):
            np.fill_diagonal(A[a], 0)
    A[0, 0, 1] = max(A[0, 0, 1], 1)
    if not directed:
        A[0, 1, 0] = A[0, 0, 1]
    graph = MultilayerGraph.from_dense(A, directed=directed, allow_self_loops=loops)
    mode = Mode.for_graph(graph, diagonal)
    u = rng.uniform(0.2, 1.5, size=(n, K))
    v = u.copy() if not directed else rng.uniform(0.2, 1.5, size=(n, K))
    w = rng.uniform(0.2, 1.5, size=(L, K, K))
    if not directed:
        w = (w + w.transpose(0, 2, 1)) / 2
    if diagonal:
        w = w * np.eye(K)
    params = ModelParams(u, v, w, mode)
    holdout = None
    if holdout_frac > 0:
        i, j = graph.dyads()
        pick = rng.random(len(i)) < holdout_frac
        a = int(rng.integers(L))
        holdout = {a: (i[pick], j[pick])}
    return graph, A, params, holdout


@pytest.fixture
def instance_factory():
    return random_instance
