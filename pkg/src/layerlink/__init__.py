"""Multilayer mixed-membership block model: fitting, benchmarks, link prediction."""

__version__ = "0.1.0"

from .graph import MultilayerGraph
from .model import (
    Mode, ModelParams, NormalizedMembership, expected_edges, expected_edges_tensor,
    hard_assignment, log_likelihood, normalize_memberships, sample_network,
)
from .em import (
    EdgeResponsibilities, EmConfig, FitResult, run_em, update_rho, update_u,
    update_v, update_w, variational_objective,
)
from .benchmark import (
    BenchmarkSpec, GroundTruth, MixedStructureSpec, generate_benchmark,
    generate_mixed_structure, preset,
)
from .evaluation import (
    HoldoutMask, PredictionScores, UndefinedMetricError, auc, best_permutation_match,
    cosine_similarity, cross_validated_auc, l1_error, make_folds, masked_fit_predict,
    membership_recovery, whole_dataset_auc,
)
from .interdependence import (
    AffinityEmbedding, InterdepReport, cluster_affinity_matrices, greedy_layer_selection,
    single_layer_auc, top_down_removal,
)
