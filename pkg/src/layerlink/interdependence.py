"""How much other layers help predict one layer, and clustering of layer affinities."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from sklearn.cluster import KMeans

from .em import EmConfig
from .evaluation import CVResult, HoldoutMask, cross_validated_auc, make_folds
from .graph import MultilayerGraph
from .model import ModelParams


@dataclass(frozen=True)
class TrajectoryStep:
    layers: tuple[int, ...]
    mean: float
    std: float
    fold_aucs: tuple[float, ...] = ()


@dataclass
class InterdepReport:
    """AUC trajectory of a greedy (adding) or top-down (removing) search.

    ``candidates[s]`` maps every layer tried at step ``s + 1`` to the
    ``(mean, std)`` it produced, so each recorded choice can be audited.
    """

    target_layer: int
    direction: str
    trajectory: list[TrajectoryStep] = field(default_factory=list)
    selection_order: list[int] = field(default_factory=list)
    candidates: list[dict] = field(default_factory=list)
    mask_digest: str = ""

    def rows(self):
        for step, t in enumerate(self.trajectory):
            yield step, t.layers, t.mean, t.std


def _cv(graph, target, layers, config, mask) -> CVResult:
    return cross_validated_auc(graph, target, sorted(layers), config, mask=mask)


def _step(layers, res: CVResult) -> TrajectoryStep:
    return TrajectoryStep(tuple(sorted(layers)), res.mean, res.std, tuple(res.fold_aucs))


def _check_target(graph: MultilayerGraph, target_layer: int) -> int:
    target_layer = int(target_layer)
    if not 0 <= target_layer < graph.n_layers:
        raise IndexError(f"target layer {target_layer} out of range [0, {graph.n_layers})")
    return target_layer


def single_layer_auc(graph: MultilayerGraph, target_layer: int, config: EmConfig,
                     seed=None, mask: Optional[HoldoutMask] = None) -> CVResult:
    """Cross-validated AUC when the fit only sees the target layer."""
    target_layer = _check_target(graph, target_layer)
    return cross_validated_auc(graph, target_layer, [target_layer], config, seed, mask)


def greedy_layer_selection(graph: MultilayerGraph, target_layer: int, max_layers: int,
                           config: EmConfig, seed=None) -> InterdepReport:
    """Grow the training set one layer at a time, always taking the best candidate.

    All candidate sets are scored on the same fold mask. The search keeps
    going until ``max_layers`` layers are in, even if the AUC drops.
    Ties go to the lowest layer index.
    """
    target_layer = _check_target(graph, target_layer)
    if not 1 <= max_layers <= graph.n_layers:
        raise ValueError(f"max_layers must lie in [1, {graph.n_layers}]")
    mask = make_folds(graph, target_layer, seed)
    chosen = [target_layer]
    report = InterdepReport(target_layer, "greedy", mask_digest=mask.digest())
    report.trajectory.append(_step(chosen, _cv(graph, target_layer, chosen, config, mask)))
    while len(chosen) < max_layers:
        scores = {}
        results = {}
        for b in range(graph.n_layers):
            if b in chosen:
                continue
            res = _cv(graph, target_layer, chosen + [b], config, mask)
            scores[b] = (res.mean, res.std)
            results[b] = res
        best = max(scores, key=lambda b: (scores[b][0], -b))
        chosen.append(best)
        report.selection_order.append(best)
        report.candidates.append(scores)
        report.trajectory.append(_step(chosen, results[best]))
    return report


def top_down_removal(graph: MultilayerGraph, target_layer: int, min_layers: int,
                     config: EmConfig, seed=None) -> InterdepReport:
    """Start from every layer and drop, one at a time, the least useful one.

    At each step the layer whose removal leaves the highest mean AUC goes
    (ties to the lowest index). The target layer is never removed.
    """
    target_layer = _check_target(graph, target_layer)
    if not 1 <= min_layers <= graph.n_layers:
        raise ValueError(f"min_layers must lie in [1, {graph.n_layers}]")
    mask = make_folds(graph, target_layer, seed)
    kept = list(range(graph.n_layers))
    report = InterdepReport(target_layer, "topdown", mask_digest=mask.digest())
    report.trajectory.append(_step(kept, _cv(graph, target_layer, kept, config, mask)))
    while len(kept) > min_layers:
        scores = {}
        results = {}
        for b in kept:
            if b == target_layer:
                continue
            rest = [a for a in kept if a != b]
            res = _cv(graph, target_layer, rest, config, mask)
            scores[b] = (res.mean, res.std)
            results[b] = res
        drop = max(scores, key=lambda b: (scores[b][0], -b))
        kept.remove(drop)
        report.selection_order.append(drop)
        report.candidates.append(scores)
        report.trajectory.append(_step(kept, results[drop]))
    return report


@dataclass(frozen=True, eq=False)
class AffinityEmbedding:
    points: np.ndarray  # (L, K*K)
    cluster_labels: np.ndarray  # (L,)
    pca_coords: np.ndarray  # (L, 2)
    inertia: float


def pca_2d(points: np.ndarray) -> np.ndarray:
    """Project mean-centred rows onto their top two principal axes.

    Each axis is oriented so its largest-magnitude loading is positive.
    Missing components (fewer than two nonzero directions) are zero.
    """
    X = np.asarray(points, dtype=float)
    X = X - X.mean(axis=0)
    out = np.zeros((X.shape[0], 2))
    if X.shape[0] < 2:
        return out
    _, s, vt = np.linalg.svd(X, full_matrices=False)
    for c in range(min(2, len(s))):
        if s[c] <= 1e-12 * max(s[0], 1.0):
            break
        axis = vt[c]
        if axis[np.argmax(np.abs(axis))] < 0:
            axis = -axis
        out[:, c] = X @ axis
    return out


def _first_appearance(labels: np.ndarray) -> np.ndarray:
    uniq, first = np.unique(labels, return_index=True)
    remap = np.empty(int(labels.max()) + 1, dtype=np.int64)
    remap[uniq[np.argsort(first)]] = np.arange(len(uniq))
    return remap[labels]


def cluster_affinity_matrices(params: ModelParams, n_clusters: int, seed=None) -> AffinityEmbedding:
    """k-means on the flattened ``w`` matrices plus a 2-D PCA view.

    ``params`` may also be a bare ``(L, K, K)`` array. Cluster ids are
    renumbered in order of first appearance over the layers.
    """
    w = np.asarray(getattr(params, "w", params), dtype=float)
    if w.ndim != 3 or w.shape[1] != w.shape[2]:
        raise ValueError("affinities must have shape (L, K, K)")
    L, K, _ = w.shape
    if not 1 <= n_clusters <= L:
        raise ValueError(f"n_clusters must lie in [1, {L}] (got {n_clusters})")
    points = w.reshape(L, K * K)
    km = KMeans(n_clusters=n_clusters, init="k-means++", n_init=10, random_state=seed)
    labels = km.fit_predict(points)
    labels = _first_appearance(np.asarray(labels, dtype=np.int64))
    # recompute inertia from the final labels so exact duplicates give exactly 0
    inertia = 0.0
    for c in np.unique(labels):
        grp = points[labels == c]
        inertia += float(((grp - grp.mean(axis=0)) ** 2).sum())
    return AffinityEmbedding(points, labels, pca_2d(points), inertia)
