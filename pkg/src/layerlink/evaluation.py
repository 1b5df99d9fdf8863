"""Recovery metrics and cross-validated link prediction."""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np
from scipy.stats import rankdata

from .em import EmConfig, FitResult, run_em
from .graph import MultilayerGraph
from .model import NormalizedMembership, normalize_memberships

N_FOLDS = 5
MAX_PERMUTATION_K = 10


class UndefinedMetricError(ValueError):
    """Raised when a score needs both positives and negatives but lacks one."""


def _values(m) -> np.ndarray:
    if isinstance(m, NormalizedMembership):
        return m.values
    return np.asarray(m, dtype=float)


def _check_shapes(a, b):
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"membership shapes differ: {a.shape} vs {b.shape}")


def cosine_similarity(truth, inferred) -> float:
    """Node-averaged cosine similarity; rows with zero norm are skipped."""
    a, b = _values(truth), _values(inferred)
    _check_shapes(a, b)
    na, nb = np.linalg.norm(a, axis=1), np.linalg.norm(b, axis=1)
    ok = (na > 0) & (nb > 0)
    if not ok.any():
        raise ValueError("no node has nonzero membership in both inputs")
    cos = np.einsum("ik,ik->i", a[ok], b[ok]) / (na[ok] * nb[ok])
    return float(np.clip(cos, -1.0, 1.0).mean())


def l1_error(truth, inferred) -> float:
    """Half the summed absolute difference, averaged over nodes."""
    a, b = _values(truth), _values(inferred)
    _check_shapes(a, b)
    return float(np.abs(a - b).sum() / (2 * a.shape[0]))


def best_permutation_match(truth, inferred, objective: str = "cs"):
    """Relabel inferred groups to best match the truth.

    ``truth`` and ``inferred`` may each be a single membership matrix or a
    sequence of them (e.g. ``(u, v)``); one shared permutation is chosen for
    the whole sequence and the returned metric is averaged over it. Ties go
    to the lexicographically smallest permutation.
    """
    if objective not in ("cs", "l1"):
        raise ValueError("objective must be 'cs' or 'l1'")
    truths = [truth] if not isinstance(truth, (list, tuple)) else list(truth)
    infs = [inferred] if not isinstance(inferred, (list, tuple)) else list(inferred)
    if len(truths) != len(infs):
        raise ValueError("truth and inferred sequences differ in length")
    truths = [_values(t) for t in truths]
    infs = [_values(x) for x in infs]
    for t, x in zip(truths, infs):
        _check_shapes(t, x)
    K = truths[0].shape[1]
    if K > MAX_PERMUTATION_K:
        raise NotImplementedError(
            f"exhaustive matching over K! permutations supports K <= {MAX_PERMUTATION_K} (got {K})")
    metric = cosine_similarity if objective == "cs" else l1_error
    best_perm, best_val = None, None
    for perm in itertools.permutations(range(K)):
        cols = list(perm)
        val = float(np.mean([metric(t, x[:, cols]) for t, x in zip(truths, infs)]))
        better = best_val is None or (val > best_val if objective == "cs" else val < best_val)
        if better:
            best_perm, best_val = perm, val
    return best_perm, best_val


def match_scores(truth, inferred) -> dict:
    """CS and L1 after their own best permutations."""
    _, cs = best_permutation_match(truth, inferred, "cs")
    _, l1 = best_permutation_match(truth, inferred, "l1")
    return {"cs": cs, "l1": l1}


def membership_recovery(truth, fit_or_params, joint: bool = False) -> dict:
    """CS and L1 of the inferred memberships against a planted one.

    Directed fits score ``u`` and ``v`` and report the average. Each matrix
    gets its own best permutation unless ``joint`` is set: in full mode any
    relabeling of ``v`` can be absorbed into the columns of ``w``, so the
    labels of ``u`` and ``v`` are not tied to each other.
    """
    params = getattr(fit_or_params, "params", fit_or_params)
    truth = _values(truth)
    mats = [params.u, params.v] if params.mode.directed else [params.u]
    mats = [normalize_memberships(x) for x in mats]
    if joint:
        return match_scores([truth] * len(mats), mats)
    scores = [match_scores(truth, x) for x in mats]
    return {key: float(np.mean([sc[key] for sc in scores])) for key in ("cs", "l1")}


# ---- link prediction -------------------------------------------------

@dataclass(frozen=True, eq=False)
class PredictionScores:
    i: np.ndarray
    j: np.ndarray
    layer: np.ndarray
    score: np.ndarray
    truth: np.ndarray


def auc(scores, truth=None) -> float:
    """Probability that a random positive outscores a random negative.

    Ties count one half. Accepts :class:`PredictionScores` or a pair of
    arrays ``(scores, truth)``.
    """
    if isinstance(scores, PredictionScores):
        s, t = scores.score, scores.truth
    else:
        s, t = scores, truth
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=bool)
    n_pos = int(t.sum())
    n_neg = len(t) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(
            f"AUC needs at least one positive and one negative (got {n_pos} and {n_neg})")
    ranks = rankdata(s, method="average")
    u_stat = ranks[t].sum() - n_pos * (n_pos + 1) / 2
    return float(u_stat / (n_pos * n_neg))


@dataclass(frozen=True, eq=False)
class HoldoutMask:
    target_layer: int
    i: np.ndarray
    j: np.ndarray
    fold: np.ndarray
    seed: Optional[int] = None
    n_folds: int = N_FOLDS

    def dyads(self, fold: int) -> tuple[np.ndarray, np.ndarray]:
        if not 0 <= fold < self.n_folds:
            raise IndexError("fold index out of range")
        sel = self.fold == fold
        return self.i[sel], self.j[sel]

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.i, self.j, self.fold):
            h.update(np.ascontiguousarray(arr, dtype=np.int64).tobytes())
        h.update(str(self.target_layer).encode())
        return h.hexdigest()[:16]


def make_folds(graph: MultilayerGraph, target_layer: int, seed=None,
               n_folds: int = N_FOLDS) -> HoldoutMask:
    """Randomly split every dyad of the target layer into near-equal folds."""
    if not 0 <= target_layer < graph.n_layers:
        raise IndexError("target layer out of range")
    i, j = graph.dyads()
    rng = np.random.default_rng(seed)
    fold = np.empty(len(i), dtype=np.int64)
    fold[rng.permutation(len(i))] = np.arange(len(i)) % n_folds
    return HoldoutMask(target_layer, i, j, fold, seed, n_folds)


def _link_present(graph: MultilayerGraph, layer: int, i, j) -> np.ndarray:
    n = graph.n_nodes
    sel = graph.layer == layer
    keys = graph.src[sel] * n + graph.dst[sel]
    i, j = np.asarray(i), np.asarray(j)
    if not graph.directed:
        i, j = np.minimum(i, j), np.maximum(i, j)
    return np.isin(i * n + j, keys)


def predicted_counts(params, layer: int, i, j) -> np.ndarray:
    return np.einsum("ck,kl,cl->c", params.u[i], params.w[layer], params.v[j])


def masked_fit_predict(graph: MultilayerGraph, mask: HoldoutMask, fold: int,
                       training_layers: Iterable[int], config: EmConfig,
                       return_fit: bool = False):
    """Fit with one fold of the target layer hidden and score that fold."""
    target = mask.target_layer
    layers = sorted(set(int(a) for a in training_layers))
    if target not in layers:
        raise ValueError("training layers must include the target layer")
    hi, hj = mask.dyads(fold)
    truth = _link_present(graph, target, hi, hj)
    if truth.all() or not truth.any():
        raise UndefinedMetricError(
            f"fold {fold} of layer {target} has {int(truth.sum())} links among "
            f"{len(truth)} dyads; AUC needs both links and non-links")
    sub = graph.restrict_layers(layers)
    t_sub = layers.index(target)
    fit = run_em(sub, config, holdout={t_sub: (hi, hj)})
    scores = PredictionScores(hi, hj, np.full(len(hi), target),
                              predicted_counts(fit.params, t_sub, hi, hj), truth)
    return (scores, fit) if return_fit else scores


@dataclass
class CVResult:
    mean: float
    std: float
    fold_aucs: list
    mask_digest: str
    scores: list = field(default_factory=list, repr=False)

    def __iter__(self):
        # unpacks as (mean, std)
        return iter((self.mean, self.std))


def cross_validated_auc(graph: MultilayerGraph, target_layer: int,
                        training_layers: Optional[Iterable[int]], config: EmConfig,
                        seed=None, mask: Optional[HoldoutMask] = None) -> CVResult:
    """Mean and standard deviation of the held-out AUC over the folds."""
    if mask is None:
        mask = make_folds(graph, target_layer, seed)
    elif mask.target_layer != target_layer:
        raise ValueError("mask was built for a different target layer")
    if training_layers is None:
        training_layers = range(graph.n_layers)
    training_layers = list(training_layers)
    fold_aucs, all_scores = [], []
    for f in range(mask.n_folds):
        s = masked_fit_predict(graph, mask, f, training_layers, config)
        fold_aucs.append(auc(s))
        all_scores.append(s)
    return CVResult(float(np.mean(fold_aucs)), float(np.std(fold_aucs)),
                    fold_aucs, mask.digest(), all_scores)


def whole_dataset_auc(graph: MultilayerGraph, config: EmConfig,
                      fit: Optional[FitResult] = None):
    """Fit on everything and rank all dyads of all layers together."""
    if fit is None:
        fit = run_em(graph, config)
    i, j = graph.dyads()
    parts = [PredictionScores(i, j, np.full(len(i), a),
                              predicted_counts(fit.params, a, i, j),
                              _link_present(graph, a, i, j))
             for a in range(graph.n_layers)]
    scores = PredictionScores(*(np.concatenate([getattr(p, f) for p in parts])
                                for f in ("i", "j", "layer", "score", "truth")))
    return auc(scores), scores, fit


def normalized(fit_or_params) -> tuple[NormalizedMembership, NormalizedMembership]:
    params = getattr(fit_or_params, "params", fit_or_params)
    return normalize_memberships(params.u), normalize_memberships(params.v)
