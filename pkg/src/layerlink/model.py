"""Model parameters, expected edge counts, likelihood, sampling and memberships.

Tensors use the layer-first layout ``(L, N, N)`` throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .graph import MultilayerGraph

EPS = 1e-12


class Mode(str, Enum):
    DIRECTED_FULL = "directed-full"
    UNDIRECTED_FULL = "undirected-full"
    DIRECTED_DIAGONAL = "directed-diagonal"
    UNDIRECTED_DIAGONAL = "undirected-diagonal"

    @property
    def directed(self) -> bool:
        return self in (Mode.DIRECTED_FULL, Mode.DIRECTED_DIAGONAL)

    @property
    def diagonal(self) -> bool:
        return self in (Mode.DIRECTED_DIAGONAL, Mode.UNDIRECTED_DIAGONAL)

    @classmethod
    def parse(cls, value) -> "Mode":
        if isinstance(value, Mode):
            return value
        aliases = {"full": "directed-full", "diagonal": "directed-diagonal"}
        try:
            return cls(aliases.get(value, value))
        except ValueError:
            raise ValueError(f"unknown mode {value!r}; choose one of "
                             + ", ".join(m.value for m in cls)) from None

    @classmethod
    def for_graph(cls, graph: MultilayerGraph, diagonal: bool = False) -> "Mode":
        if graph.directed:
            return cls.DIRECTED_DIAGONAL if diagonal else cls.DIRECTED_FULL
        return cls.UNDIRECTED_DIAGONAL if diagonal else cls.UNDIRECTED_FULL


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Memberships ``u`` (N, K), ``v`` (N, K) and affinities ``w`` (L, K, K)."""

    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    mode: Mode = Mode.DIRECTED_FULL

    def __post_init__(self):
        mode = Mode.parse(self.mode)
        u = np.array(self.u, dtype=float)
        v = np.array(self.v, dtype=float)
        w = np.array(self.w, dtype=float)
        if u.ndim != 2 or v.shape != u.shape:
            raise ValueError("u and v must both have shape (N, K)")
        if w.ndim != 3 or w.shape[1:] != (u.shape[1], u.shape[1]):
            raise ValueError("w must have shape (L, K, K)")
        if (u < 0).any() or (v < 0).any() or (w < 0).any():
            raise ValueError("model parameters must be nonnegative")
        if not mode.directed:
            if not np.array_equal(u, v):
                raise ValueError("undirected modes require u == v")
            if not np.array_equal(w, w.transpose(0, 2, 1)):
                raise ValueError("undirected modes require symmetric w")
        if mode.diagonal:
            off = ~np.eye(u.shape[1], dtype=bool)
            if (w[:, off] != 0).any():
                raise ValueError("diagonal modes require zero off-diagonal w")
        for name, arr in (("u", u), ("v", v), ("w", w)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "mode", mode)

    @property
    def n_nodes(self) -> int:
        return self.u.shape[0]

    @property
    def k_groups(self) -> int:
        return self.u.shape[1]

    @property
    def n_layers(self) -> int:
        return self.w.shape[0]


def expected_edges(params: ModelParams, i: int, j: int, layer: int) -> float:
    """Expected number of edges from ``i`` to ``j`` in ``layer``."""
    n, K = params.u.shape
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError("node index out of range")
    if not 0 <= layer < params.n_layers:
        raise IndexError("layer index out of range")
    u, v, w = params.u, params.v, params.w[layer]
    # accumulation order matches expected_edges_tensor exactly
    total = 0.0
    for k in range(K):
        for l in range(K):
            total = total + w[k, l] * (u[i, k] * v[j, l])
    return float(total)


def expected_edges_tensor(params: ModelParams, layers=None) -> np.ndarray:
    """Dense ``(L, N, N)`` tensor of expected edge counts."""
    layers = range(params.n_layers) if layers is None else layers
    u, v, w = params.u, params.v, params.w
    n, K = u.shape
    out = np.zeros((len(layers), n, n))
    for idx, a in enumerate(layers):
        M = out[idx]
        for k in range(K):
            for l in range(K):
                M += w[a, k, l] * np.multiply.outer(u[:, k], v[:, l])
    return out


def _self_loops(graph: MultilayerGraph, allow_self_loops: Optional[bool]) -> bool:
    return graph.allow_self_loops if allow_self_loops is None else bool(allow_self_loops)


def log_likelihood(graph: MultilayerGraph, params: ModelParams,
                   allow_self_loops: Optional[bool] = None, holdout=None) -> float:
    """Poisson log-likelihood without the ``log A!`` constant.

    Undirected graphs sum each unordered pair once. ``holdout`` maps a layer
    index to ``(i, j)`` arrays of dyads left out of every sum. Returns
    ``-inf`` when an observed edge has zero expected count.
    """
    from .em import _Design

    if params.n_nodes != graph.n_nodes or params.n_layers != graph.n_layers:
        raise ValueError("graph and params disagree on N or L")
    design = _Design.build(graph, params.mode, params.k_groups,
                           allow_self_loops=_self_loops(graph, allow_self_loops),
                           holdout=holdout)
    return design.log_likelihood(params.u, params.v, params.w)


def sample_network(params: ModelParams, seed=None,
                   allow_self_loops: Optional[bool] = None) -> MultilayerGraph:
    """Draw every entry of the adjacency tensor from Poisson(M).

    Undirected modes sample the pairs ``i < j`` (plus ``i == i`` when
    self-loops are allowed) and mirror them.
    """
    rng = np.random.default_rng(seed)
    directed = params.mode.directed
    loops = directed if allow_self_loops is None else bool(allow_self_loops)
    n = params.n_nodes
    if directed:
        ii, jj = np.divmod(np.arange(n * n), n)
        keep = (ii != jj) | loops
    else:
        ii, jj = np.triu_indices(n, k=0 if loops else 1)
        keep = slice(None)
    ii, jj = ii[keep], jj[keep]
    src, dst, lay, wt = [], [], [], []
    for a in range(params.n_layers):
        M = expected_edges_tensor(params, [a])[0]
        counts = rng.poisson(M[ii, jj])
        nz = counts > 0
        src.append(ii[nz])
        dst.append(jj[nz])
        lay.append(np.full(nz.sum(), a))
        wt.append(counts[nz])
    return MultilayerGraph.from_arrays(
        n, params.n_layers, np.concatenate(src), np.concatenate(dst),
        np.concatenate(lay), np.concatenate(wt), directed=directed,
        allow_self_loops=loops,
    )


@dataclass(frozen=True, eq=False)
class NormalizedMembership:
    values: np.ndarray
    isolated: np.ndarray

    @property
    def shape(self):
        return self.values.shape


def normalize_memberships(raw) -> NormalizedMembership:
    """Scale each row to sum to one; all-zero rows stay zero and are flagged."""
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 2:
        raise ValueError("membership matrix must be 2-dimensional")
    if (raw < 0).any():
        raise ValueError("membership entries must be nonnegative")
    sums = raw.sum(axis=1)
    isolated = sums == 0
    out = np.zeros_like(raw)
    np.divide(raw, sums[:, None], out=out, where=~isolated[:, None])
    return NormalizedMembership(values=out, isolated=isolated)


ISOLATED = -1


def hard_assignment(membership) -> np.ndarray:
    """Index of the largest entry per node (lowest index on ties).

    Isolated nodes get :data:`ISOLATED`.
    """
    if not isinstance(membership, NormalizedMembership):
        membership = normalize_memberships(membership)
    labels = np.argmax(membership.values, axis=1).astype(np.int64)
    labels[membership.isolated] = ISOLATED
    return labels
