"""Synthetic multilayer benchmarks with planted ground truth."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .graph import MultilayerGraph
from .model import Mode, ModelParams, sample_network


@dataclass
class BenchmarkSpec:
    """Correlated-partition degree-corrected benchmark.

    ``interdependence`` is the probability that a node keeps its group from
    the previous layer; ``mixing`` is the fraction of edge endpoints placed
    without regard to groups.
    """

    n_nodes: int = 300
    n_layers: int = 4
    k_groups: int = 5
    interdependence: float = 0.9
    mixing: float = 0.0
    degree_exponent: float = -3.0
    k_min: int = 3
    k_max: int = 30
    seed: Optional[int] = 0

    def __post_init__(self):
        if not 0 <= self.interdependence <= 1:
            raise ValueError("interdependence p must lie in [0, 1]")
        if not 0 <= self.mixing <= 1:
            raise ValueError("mixing mu must lie in [0, 1]")
        if self.n_nodes < 2 or self.n_layers < 1 or self.k_groups < 1:
            raise ValueError("need n_nodes >= 2, n_layers >= 1, k_groups >= 1")
        if not 1 <= self.k_min <= self.k_max < self.n_nodes:
            raise ValueError("need 1 <= k_min <= k_max < n_nodes")


@dataclass(frozen=True, eq=False)
class GroundTruth:
    partitions: np.ndarray  # (L, N) group labels
    membership: np.ndarray  # (N, K) fraction of layers per group

    @classmethod
    def from_partitions(cls, partitions, k_groups: int) -> "GroundTruth":
        partitions = np.asarray(partitions, dtype=np.int64)
        L, N = partitions.shape
        counts = np.zeros((N, k_groups))
        for row in partitions:
            counts[np.arange(N), row] += 1
        return cls(partitions=partitions, membership=counts / L)


def _rng(seed_or_rng) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


def generate_correlated_partitions(spec: BenchmarkSpec, rng=None) -> GroundTruth:
    rng = _rng(spec.seed if rng is None else rng)
    N, L, K = spec.n_nodes, spec.n_layers, spec.k_groups
    parts = np.empty((L, N), dtype=np.int64)
    parts[0] = rng.integers(K, size=N)
    for a in range(1, L):
        keep = rng.random(N) < spec.interdependence
        fresh = rng.integers(K, size=N)
        parts[a] = np.where(keep, parts[a - 1], fresh)
    return GroundTruth.from_partitions(parts, K)


def degree_pmf(spec: BenchmarkSpec) -> tuple[np.ndarray, np.ndarray]:
    """Support and probabilities of the truncated discrete power law."""
    support = np.arange(spec.k_min, spec.k_max + 1)
    mass = support.astype(float) ** spec.degree_exponent
    return support, mass / mass.sum()


def sample_degree_sequence(spec: BenchmarkSpec, rng=None) -> np.ndarray:
    rng = _rng(spec.seed if rng is None else rng)
    support, pmf = degree_pmf(spec)
    cdf = np.cumsum(pmf)
    cdf[-1] = 1.0
    idx = np.searchsorted(cdf, rng.random(spec.n_nodes), side="right")
    return support[idx].astype(float)


def _pair_stubs(stubs: np.ndarray, rng) -> np.ndarray:
    stubs = rng.permutation(stubs)
    m = len(stubs) // 2
    return stubs[: 2 * m].reshape(m, 2)


def generate_dcsbm_layer(labels, degrees, mixing: float, seed=None) -> MultilayerGraph:
    """One undirected simple layer by degree-proportional stub pairing.

    Each node gets ``round(degree)`` stubs. A stub is matched inside its
    own group with probability ``1 - mixing`` and across the whole network
    otherwise. Self-loops and repeated pairs are discarded.
    """
    rng = _rng(seed)
    labels = np.asarray(labels, dtype=np.int64)
    degrees = np.rint(np.asarray(degrees, dtype=float)).astype(np.int64)
    if labels.shape != degrees.shape:
        raise ValueError("labels and degrees must have the same length")
    n = len(labels)
    stubs = np.repeat(np.arange(n), degrees)
    mixed = rng.random(len(stubs)) < mixing
    pairs = [_pair_stubs(stubs[mixed], rng)]
    inner = stubs[~mixed]
    for g in np.unique(labels):
        pairs.append(_pair_stubs(inner[labels[inner] == g], rng))
    pairs = np.concatenate(pairs) if pairs else np.zeros((0, 2), dtype=np.int64)
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    pairs = np.sort(pairs, axis=1)
    pairs = np.unique(pairs, axis=0)
    return MultilayerGraph.from_arrays(n, 1, pairs[:, 0], pairs[:, 1],
                                       np.zeros(len(pairs), dtype=np.int64),
                                       directed=False, allow_self_loops=False)


def generate_benchmark(spec: BenchmarkSpec) -> tuple[MultilayerGraph, GroundTruth]:
    rng = _rng(spec.seed)
    truth = generate_correlated_partitions(spec, rng)
    src, dst, lay = [], [], []
    for a in range(spec.n_layers):
        degrees = sample_degree_sequence(spec, rng)
        g = generate_dcsbm_layer(truth.partitions[a], degrees, spec.mixing, rng)
        src.append(g.src)
        dst.append(g.dst)
        lay.append(np.full(g.n_edges, a))
    graph = MultilayerGraph.from_arrays(
        spec.n_nodes, spec.n_layers, np.concatenate(src), np.concatenate(dst),
        np.concatenate(lay), directed=False, allow_self_loops=False,
    )
    return graph, truth


ARCHETYPES = ("assortative", "disassortative", "core-periphery", "directed-biased")


def archetype_affinity(structure: str, on: float, off: float, weak: Optional[float] = None,
                       k_groups: int = 2) -> np.ndarray:
    """K x K affinity matrix for one of the named layer structures."""
    K = k_groups
    weak = off / 2 if weak is None else weak
    eye = np.eye(K, dtype=bool)
    if structure == "assortative":
        return np.where(eye, on, off)
    if structure == "disassortative":
        return np.where(eye, off, on)
    if structure == "core-periphery":
        w = np.full((K, K), weak)
        w[0, :] = off
        w[:, 0] = off
        w[0, 0] = on
        return w
    if structure == "directed-biased":
        upper = np.triu(np.ones((K, K), dtype=bool), 1)
        return np.where(eye, off, np.where(upper, on, weak))
    raise ValueError(f"unknown structure {structure!r}; choose from {', '.join(ARCHETYPES)}")


@dataclass
class MixedStructureSpec:
    structures: Sequence[str]
    on: Sequence[float] | float = 0.04
    off: Sequence[float] | float = 0.004
    weak: Sequence[float] | float | None = None
    n_nodes: int = 300
    k_groups: int = 2
    seed: Optional[int] = 0

    def _per_layer(self, value):
        if value is None or np.isscalar(value):
            return [value] * len(self.structures)
        value = list(value)
        if len(value) != len(self.structures):
            raise ValueError("per-layer values must match the number of structures")
        return value

    def affinities(self) -> np.ndarray:
        ons, offs, weaks = (self._per_layer(x) for x in (self.on, self.off, self.weak))
        return np.stack([
            archetype_affinity(s, on, off, weak, self.k_groups)
            for s, on, off, weak in zip(self.structures, ons, offs, weaks)
        ])


PRESETS = {
    "G1": dict(structures=["assortative", "disassortative"], on=0.04, off=0.004),
    "G2": dict(structures=["assortative", "disassortative", "core-periphery", "directed-biased"],
               on=0.08, off=0.008, weak=0.004),
    "G3": dict(structures=["assortative", "assortative", "disassortative", "disassortative"],
               on=0.04, off=0.004),
}


def preset(name: str, seed: Optional[int] = 0) -> MixedStructureSpec:
    try:
        cfg = PRESETS[name.upper()]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None
    return MixedStructureSpec(n_nodes=300, k_groups=2, seed=seed, **cfg)


def planted_params(spec: MixedStructureSpec) -> ModelParams:
    """Equal-size one-hot memberships with the spec's affinities."""
    N, K = spec.n_nodes, spec.k_groups
    groups = np.arange(N) * K // N
    u = np.eye(K)[groups]
    return ModelParams(u, u, spec.affinities(), Mode.DIRECTED_FULL)


def generate_mixed_structure(spec: MixedStructureSpec) -> tuple[MultilayerGraph, GroundTruth]:
    params = planted_params(spec)
    graph = sample_network(params, spec.seed, allow_self_loops=True)
    groups = np.argmax(params.u, axis=1)
    truth = GroundTruth.from_partitions(np.tile(groups, (len(spec.structures), 1)), spec.k_groups)
    return graph, truth
