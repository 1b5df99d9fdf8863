"""Sparse multilayer adjacency tensor."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MultilayerGraph:
    """Integer-weighted multilayer network on a fixed node set.

    Edges are kept as COO arrays sorted by ``(layer, src, dst)``. In an
    undirected graph every stored pair satisfies ``src <= dst`` and
    :meth:`weight` answers symmetric queries.

    ``allow_self_loops`` controls whether the diagonal dyads ``(i, i)`` take
    part in likelihoods, sampling and hold-out folds. ``None`` resolves to
    ``True`` for directed and ``False`` for undirected graphs.
    """

    n_nodes: int
    n_layers: int
    directed: bool
    src: np.ndarray
    dst: np.ndarray
    layer: np.ndarray
    weight_values: np.ndarray
    node_labels: Optional[tuple[str, ...]] = None
    layer_names: Optional[tuple[str, ...]] = None
    allow_self_loops: Optional[bool] = None

    def __post_init__(self):
        if self.n_nodes < 1 or self.n_layers < 1:
            raise ValueError("n_nodes and n_layers must be positive")
        if self.node_labels is not None and len(self.node_labels) != self.n_nodes:
            raise ValueError("node_labels length must equal n_nodes")
        if self.layer_names is not None and len(self.layer_names) != self.n_layers:
            raise ValueError("layer_names length must equal n_layers")
        if self.allow_self_loops is None:
            object.__setattr__(self, "allow_self_loops", bool(self.directed))

    @cached_property
    def _index(self) -> dict:
        return {
            (int(a), int(i), int(j)): int(w)
            for a, i, j, w in zip(self.layer, self.src, self.dst, self.weight_values)
        }

    @classmethod
    def from_edges(
        cls,
        n_nodes: int,
        n_layers: int,
        edges: Iterable[tuple[int, int, int, int]],
        directed: bool = True,
        node_labels: Optional[Sequence[str]] = None,
        layer_names: Optional[Sequence[str]] = None,
        allow_self_loops: Optional[bool] = None,
    ) -> "MultilayerGraph":
        """Build a graph from ``(i, j, layer, weight)`` tuples.

        Repeated pairs are summed; in undirected graphs ``(j, i)`` is folded
        onto ``(i, j)``. Zero weights are dropped.
        """
        rows = np.asarray(list(edges), dtype=np.int64).reshape(-1, 4)
        return cls.from_arrays(
            n_nodes, n_layers, rows[:, 0], rows[:, 1], rows[:, 2], rows[:, 3],
            directed=directed, node_labels=node_labels, layer_names=layer_names,
            allow_self_loops=allow_self_loops,
        )

    @classmethod
    def from_arrays(
        cls,
        n_nodes: int,
        n_layers: int,
        src,
        dst,
        layer,
        weight=None,
        directed: bool = True,
        node_labels: Optional[Sequence[str]] = None,
        layer_names: Optional[Sequence[str]] = None,
        allow_self_loops: Optional[bool] = None,
    ) -> "MultilayerGraph":
        src = np.asarray(src, dtype=np.int64).ravel()
        dst = np.asarray(dst, dtype=np.int64).ravel()
        layer = np.asarray(layer, dtype=np.int64).ravel()
        weight = (np.ones_like(src) if weight is None
                  else np.asarray(weight, dtype=np.int64).ravel())
        if not (len(src) == len(dst) == len(layer) == len(weight)):
            raise ValueError("edge arrays must have equal length")
        if len(src):
            if src.min() < 0 or dst.min() < 0 or max(src.max(), dst.max()) >= n_nodes:
                raise IndexError("node index out of range")
            if layer.min() < 0 or layer.max() >= n_layers:
                raise IndexError("layer index out of range")
            if weight.min() < 0:
                raise ValueError("edge weights must be nonnegative")
        if not directed:
            src, dst = np.minimum(src, dst), np.maximum(src, dst)
        keep = weight > 0
        src, dst, layer, weight = src[keep], dst[keep], layer[keep], weight[keep]
        # aggregate parallel entries
        key = (layer * n_nodes + src) * n_nodes + dst
        uniq, inv = np.unique(key, return_inverse=True)
        agg = np.bincount(inv, weights=weight, minlength=len(uniq)).astype(np.int64)
        dst_u = uniq % n_nodes
        src_u = (uniq // n_nodes) % n_nodes
        layer_u = uniq // (n_nodes * n_nodes)
        return cls(
            n_nodes=int(n_nodes),
            n_layers=int(n_layers),
            directed=bool(directed),
            src=_frozen(src_u),
            dst=_frozen(dst_u),
            layer=_frozen(layer_u),
            weight_values=_frozen(agg),
            node_labels=None if node_labels is None else tuple(str(s) for s in node_labels),
            layer_names=None if layer_names is None else tuple(str(s) for s in layer_names),
            allow_self_loops=allow_self_loops,
        )

    @classmethod
    def from_dense(cls, A: np.ndarray, directed: bool = True, **kwargs) -> "MultilayerGraph":
        """Build from a dense ``(L, N, N)`` array of nonnegative integers."""
        A = np.asarray(A)
        if A.ndim != 3 or A.shape[1] != A.shape[2]:
            raise ValueError("dense tensor must have shape (L, N, N)")
        if not directed:
            if not np.array_equal(A, A.transpose(0, 2, 1)):
                raise ValueError("undirected dense tensor must be symmetric")
            A = np.triu(A)
        a, i, j = np.nonzero(A)
        return cls.from_arrays(A.shape[1], A.shape[0], i, j, a, A[a, i, j],
                               directed=directed, **kwargs)

    @property
    def n_edges(self) -> int:
        """Number of stored (pair, layer) entries."""
        return len(self.src)

    @property
    def total_weight(self) -> int:
        return int(self.weight_values.sum())

    @property
    def labels(self) -> tuple[str, ...]:
        if self.node_labels is not None:
            return self.node_labels
        return tuple(str(i) for i in range(self.n_nodes))

    @property
    def names(self) -> tuple[str, ...]:
        if self.layer_names is not None:
            return self.layer_names
        return tuple(str(a) for a in range(self.n_layers))

    def weight(self, i: int, j: int, layer: int) -> int:
        if not (0 <= i < self.n_nodes and 0 <= j < self.n_nodes):
            raise IndexError("node index out of range")
        if not 0 <= layer < self.n_layers:
            raise IndexError("layer index out of range")
        if not self.directed and i > j:
            i, j = j, i
        return self._index.get((layer, i, j), 0)

    def layer_edge_counts(self) -> np.ndarray:
        return np.bincount(self.layer, weights=self.weight_values,
                           minlength=self.n_layers).astype(np.int64)

    def to_dense(self) -> np.ndarray:
        """Dense ``(L, N, N)`` tensor; symmetric for undirected graphs."""
        A = np.zeros((self.n_layers, self.n_nodes, self.n_nodes), dtype=np.int64)
        A[self.layer, self.src, self.dst] = self.weight_values
        if not self.directed:
            A[self.layer, self.dst, self.src] = self.weight_values
        return A

    def dyads(self) -> tuple[np.ndarray, np.ndarray]:
        """All dyads of one layer that take part in the likelihood.

        Ordered pairs for directed graphs, ``i <= j`` pairs for undirected
        ones; the diagonal is included only when self-loops are allowed.
        """
        n = self.n_nodes
        if self.directed:
            i, j = np.divmod(np.arange(n * n), n)
            keep = (i != j) | self.allow_self_loops
        else:
            i, j = np.triu_indices(n, k=0 if self.allow_self_loops else 1)
            return i.astype(np.int64), j.astype(np.int64)
        return i[keep], j[keep]

    def restrict_layers(self, layers: Sequence[int]) -> "MultilayerGraph":
        """Subgraph on the given layers, renumbered in the order given."""
        layers = [int(a) for a in layers]
        if len(set(layers)) != len(layers) or not layers:
            raise ValueError("layers must be a nonempty list of distinct indices")
        for a in layers:
            if not 0 <= a < self.n_layers:
                raise IndexError("layer index out of range")
        remap = np.full(self.n_layers, -1, dtype=np.int64)
        remap[layers] = np.arange(len(layers))
        keep = remap[self.layer] >= 0
        names = None if self.layer_names is None else [self.layer_names[a] for a in layers]
        return MultilayerGraph.from_arrays(
            self.n_nodes, len(layers), self.src[keep], self.dst[keep],
            remap[self.layer[keep]], self.weight_values[keep], directed=self.directed,
            node_labels=self.node_labels, layer_names=names,
            allow_self_loops=self.allow_self_loops,
        )

    def with_self_loops(self, allow: bool) -> "MultilayerGraph":
        return MultilayerGraph.from_arrays(
            self.n_nodes, self.n_layers, self.src, self.dst, self.layer,
            self.weight_values, directed=self.directed, node_labels=self.node_labels,
            layer_names=self.layer_names, allow_self_loops=allow,
        )
