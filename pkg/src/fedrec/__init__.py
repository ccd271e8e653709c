"""Federated learning simulator with NNMF-driven collaborator selection
and harmonic similarity-weighted aggregation."""

from fedrec.aggregation import (
    AggregationWeights,
    CollaboratorUpdate,
    aggregate,
    combine_weights,
    fedavg,
    harmonic_aggregate,
    hsimagg,
    sample_weights,
    simagg_arithmetic,
    similarity_weights,
)
from fedrec.nnmf import FactorizationResult, factorize, rank_by_first_factor
from fedrec.params import DimensionMismatchError, ParameterVector, l1_distance, mean
from fedrec.recommender import (
    CollaboratorRecord,
    MetricsStore,
    SelectionDecision,
    normalize_metrics,
    record_round,
    select_random,
    select_recommender,
    select_sliding_window,
)
from fedrec.simulator import FederationConfig, RoundLog, make_federation, run_federation

__version__ = "0.1.0"

__all__ = [
    "AggregationWeights",
    "CollaboratorRecord",
    "CollaboratorUpdate",
    "DimensionMismatchError",
    "FactorizationResult",
    "FederationConfig",
    "MetricsStore",
    "ParameterVector",
    "RoundLog",
    "SelectionDecision",
    "aggregate",
    "combine_weights",
    "factorize",
    "fedavg",
    "harmonic_aggregate",
    "hsimagg",
    "l1_distance",
    "make_federation",
    "mean",
    "normalize_metrics",
    "rank_by_first_factor",
    "record_round",
    "run_federation",
    "sample_weights",
    "select_random",
    "select_recommender",
    "select_sliding_window",
    "simagg_arithmetic",
    "similarity_weights",
]
