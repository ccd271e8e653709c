"""Server-side aggregation of collaborator updates.

HSimAgg weighs each collaborator by how close its parameters sit to the
unweighted average (similarity weights) and by its local dataset size
(sample weights), then merges the parameters with a weighted harmonic mean.
FedAvg and an arithmetic-mean SimAgg are provided as baselines.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Hashable, Mapping, Sequence

import numpy as np

from fedrec.params import DimensionMismatchError, ParameterVector, as_params, l1_distance, mean, stack

logger = logging.getLogger(__name__)

DEFAULT_EPSILON = 1e-5
WEIGHT_SUM_TOLERANCE = 1e-6

STANDARD = "standard"
LITERAL = "literal"
MODES = (STANDARD, LITERAL)

AGGREGATORS = ("hsimagg", "simagg", "fedavg")

Distance = Callable[[ParameterVector, ParameterVector], float]


@dataclass(frozen=True)
class CollaboratorUpdate:
    id: Hashable
    params: ParameterVector
    sample_count: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "params", as_params(self.params))
        if int(self.sample_count) != self.sample_count or self.sample_count < 1:
            raise ValueError(f"sample_count must be a positive integer, got {self.sample_count!r}")


@dataclass(frozen=True)
class AggregationWeights:
    """Per-collaborator weights produced during one aggregation.

    ``similarity`` is empty for aggregators that do not use it (FedAvg).
    """

    similarity: dict = field(default_factory=dict)
    sample: dict = field(default_factory=dict)
    combined: dict = field(default_factory=dict)
    epsilon: float = DEFAULT_EPSILON


def _check_updates(updates: Sequence[CollaboratorUpdate]) -> np.ndarray:
    if len(updates) == 0:
        raise ValueError("no collaborators")
    ids = [u.id for u in updates]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate collaborator ids")
    return stack([u.params for u in updates])


def similarity_from_distances(distances: Sequence[float], epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Normalized inverse-distance weights.

    ``sim_c = sum(d) / (d_c + eps)`` normalized to sum to one. When every
    distance is zero the similarities are all 0/0 and uniform weights are
    returned instead.
    """
    d = np.asarray(distances, dtype=np.float64)
    total = d.sum()
    sim = total / (d + epsilon)
    s = sim.sum()
    if s <= 0.0:
        return np.full(d.size, 1.0 / d.size)
    return sim / s


def similarity_weights(
    updates: Sequence[CollaboratorUpdate],
    epsilon: float = DEFAULT_EPSILON,
    distance: Distance = l1_distance,
) -> dict:
    _check_updates(updates)
    center = mean([u.params for u in updates])
    dists = [distance(u.params, center) for u in updates]
    u = similarity_from_distances(dists, epsilon)
    return {upd.id: float(w) for upd, w in zip(updates, u)}


def sample_weights(updates: Sequence[CollaboratorUpdate]) -> dict:
    if len(updates) == 0:
        raise ValueError("no collaborators")
    counts = np.array([u.sample_count for u in updates], dtype=np.float64)
    v = counts / counts.sum()
    return {upd.id: float(w) for upd, w in zip(updates, v)}


def combine_weights(u: Mapping, v: Mapping) -> dict:
    if set(u) != set(v):
        raise ValueError("weight key sets differ")
    keys = list(u)
    raw = np.array([u[k] + v[k] for k in keys], dtype=np.float64)
    w = raw / raw.sum()
    return {k: float(x) for k, x in zip(keys, w)}


def _weight_vector(updates: Sequence[CollaboratorUpdate], w: Mapping) -> np.ndarray:
    try:
        wv = np.array([w[u.id] for u in updates], dtype=np.float64)
    except KeyError as exc:
        raise ValueError(f"missing weight for collaborator {exc.args[0]!r}") from None
    if len(w) != len(updates):
        raise ValueError("weights and updates refer to different collaborators")
    if abs(wv.sum() - 1.0) > WEIGHT_SUM_TOLERANCE:
        raise ValueError(f"weights must sum to 1, got {wv.sum()!r}")
    return wv


def harmonic_aggregate(
    updates: Sequence[CollaboratorUpdate],
    w: Mapping,
    mode: str = STANDARD,
    epsilon: float = DEFAULT_EPSILON,
) -> ParameterVector:
    """Coordinatewise weighted harmonic mean of the collaborator parameters.

    ``standard`` mode returns ``1 / sum(w_i / p_i)``. ``literal`` mode
    multiplies that by the weighted arithmetic mean ``sum(w_i * p_i)``, which
    is not idempotent (identical inputs p give p**2) and exists only for
    comparison runs.

    Coordinates where any value is within ``epsilon`` of zero, or where the
    values do not share a sign, fall back to the weighted arithmetic mean.
    """
    if mode not in MODES:
        raise ValueError(f"unknown aggregation mode {mode!r}; expected one of {MODES}")
    P = _check_updates(updates)
    wv = _weight_vector(updates, w)

    arith = wv @ P
    harmonic_ok = np.all(np.abs(P) >= epsilon, axis=0) & (np.all(P > 0, axis=0) | np.all(P < 0, axis=0))
    out = arith.copy()
    if np.any(harmonic_ok):
        Q = P[:, harmonic_ok]
        hm = 1.0 / (wv @ (1.0 / Q))
        out[harmonic_ok] = hm if mode == STANDARD else hm * arith[harmonic_ok]
    n_fallback = int((~harmonic_ok).sum())
    if n_fallback:
        logger.debug("arithmetic fallback on %d of %d coordinates", n_fallback, P.shape[1])
    return ParameterVector(out)


def hsimagg(
    updates: Sequence[CollaboratorUpdate],
    epsilon: float = DEFAULT_EPSILON,
    mode: str = STANDARD,
    distance: Distance = l1_distance,
) -> tuple[ParameterVector, AggregationWeights]:
    u = similarity_weights(updates, epsilon, distance)
    v = sample_weights(updates)
    w = combine_weights(u, v)
    params = harmonic_aggregate(updates, w, mode=mode, epsilon=epsilon)
    return params, AggregationWeights(similarity=u, sample=v, combined=w, epsilon=epsilon)


def fedavg(updates: Sequence[CollaboratorUpdate]) -> ParameterVector:
    P = _check_updates(updates)
    v = sample_weights(updates)
    return ParameterVector(_weight_vector(updates, v) @ P)


def simagg_arithmetic(
    updates: Sequence[CollaboratorUpdate],
    epsilon: float = DEFAULT_EPSILON,
    distance: Distance = l1_distance,
) -> ParameterVector:
    return _simagg_arithmetic(updates, epsilon, distance)[0]


def _simagg_arithmetic(updates, epsilon, distance):
    P = _check_updates(updates)
    u = similarity_weights(updates, epsilon, distance)
    v = sample_weights(updates)
    w = combine_weights(u, v)
    return ParameterVector(_weight_vector(updates, w) @ P), AggregationWeights(u, v, w, epsilon)


def aggregate(
    name: str,
    updates: Sequence[CollaboratorUpdate],
    epsilon: float = DEFAULT_EPSILON,
    mode: str = STANDARD,
) -> tuple[ParameterVector, AggregationWeights]:
    """Dispatch by aggregator name, always returning the weights used."""
    if name == "hsimagg":
        return hsimagg(updates, epsilon, mode)
    if name == "simagg":
        return _simagg_arithmetic(updates, epsilon, l1_distance)
    if name == "fedavg":
        v = sample_weights(updates)
        return fedavg(updates), AggregationWeights(sample=v, combined=dict(v), epsilon=epsilon)
    raise ValueError(f"unknown aggregator {name!r}; expected one of {AGGREGATORS}")


__all__ = [
    "AGGREGATORS",
    "AggregationWeights",
    "CollaboratorUpdate",
    "DimensionMismatchError",
    "MODES",
    "aggregate",
    "combine_weights",
    "fedavg",
    "harmonic_aggregate",
    "hsimagg",
    "sample_weights",
    "simagg_arithmetic",
    "similarity_from_distances",
    "similarity_weights",
]
