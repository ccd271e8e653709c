"""Synchronous federation orchestrator over a synthetic non-IID regression task.

Each collaborator holds inputs drawn around its own shifted mean; all share
the target ``y = x @ true_weights + noise``. Every round the configured
policy picks collaborators, each trains from the current global parameters
with full-batch gradient descent, and the configured aggregator merges the
updates. Round time is the slowest selected collaborator's simulated time.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from fedrec.aggregation import AGGREGATORS, MODES, STANDARD, CollaboratorUpdate, aggregate
from fedrec.params import ParameterVector
from fedrec.recommender import (
    POLICIES,
    MetricsStore,
    make_permutation,
    record_round,
    select,
    selection_count,
)

logger = logging.getLogger(__name__)

# Values tuned for a ~33M-parameter segmentation network; far too small a
# step for the synthetic linear task, so the task default is 0.01.
REFERENCE_HYPERPARAMS = {"learning_rate": 5e-5, "epochs_per_round": 1, "rounds": 20}

_VALIDATION_STREAM = 1
_TASK_STREAM = 2


class DivergenceError(RuntimeError):
    def __init__(self, msg: str = "divergence") -> None:
        super().__init__(msg)


class InvalidConfig(ValueError):
    def __init__(self, field: str, msg: str) -> None:
        super().__init__(msg)
        self.field = field


class RoundError(RuntimeError):
    """A component failed inside a specific round."""

    def __init__(self, round: int, cause: BaseException) -> None:
        super().__init__(f"round {round}: {cause}")
        self.round = round
        self.cause = cause


@dataclass
class FederationConfig:
    n_collaborators: int = 33
    rounds: int = 20
    fraction: float = 0.2
    learning_rate: float = 0.01
    epochs_per_round: int = 1
    epsilon: float = 1e-5
    policy: str = "recommender"
    aggregator: str = "hsimagg"
    agg_mode: str = STANDARD
    seed: int = 42
    dim: int = 10
    samples_per_collaborator: int = 50
    # N_c drawn uniformly from [s * (1 - jitter), s * (1 + jitter)]
    sample_jitter: float = 0.5
    heterogeneity: float = 0.5
    noise: float = 0.1
    validation_size: int = 500
    speed_range: tuple[float, float] = (5.0, 20.0)
    comm_overhead: float = 1.0
    # every collaborator gets the same dataset (IID degenerate case)
    shared_data: bool = False
    workers: int = 1

    def __post_init__(self) -> None:
        self.speed_range = tuple(float(x) for x in self.speed_range)
        self.validate()

    def validate(self) -> None:
        def bad(name: str, msg: str):
            raise InvalidConfig(name, f"{name} {msg}, got {getattr(self, name)!r}")

        for name in ("n_collaborators", "rounds", "epochs_per_round", "dim", "samples_per_collaborator",
                     "validation_size", "workers"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                bad(name, "must be a positive integer")
        if not 0.0 < self.fraction <= 1.0:
            bad("fraction", "must be in (0, 1]")
        if self.learning_rate < 0:
            bad("learning_rate", "must be nonnegative")
        if self.epsilon <= 0:
            bad("epsilon", "must be positive")
        if not 0.0 <= self.sample_jitter < 1.0:
            bad("sample_jitter", "must be in [0, 1)")
        for name in ("heterogeneity", "noise", "comm_overhead"):
            if getattr(self, name) < 0:
                bad(name, "must be nonnegative")
        lo, hi = self.speed_range
        if not 0 < lo <= hi:
            bad("speed_range", "must satisfy 0 < low <= high")
        if self.policy not in POLICIES:
            bad("policy", f"must be one of {POLICIES}")
        if self.aggregator not in AGGREGATORS:
            bad("aggregator", f"must be one of {AGGREGATORS}")
        if self.agg_mode not in MODES:
            bad("agg_mode", f"must be one of {MODES}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["speed_range"] = list(self.speed_range)
        return d


@dataclass
class SimCollaborator:
    id: int
    X: np.ndarray
    y: np.ndarray
    speed_factor: float

    @property
    def sample_count(self) -> int:
        return int(self.y.size)


@dataclass
class RoundLog:
    round: int
    selected_ids: list[int]
    policy: str
    mode: str
    similarity_weights: dict[int, float]
    sample_weights: dict[int, float]
    aggregation_weights: dict[int, float]
    performance_score: float
    loss: float
    duration: float
    sim_time: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Federation:
    config: FederationConfig
    collaborators: list[SimCollaborator]
    X_val: np.ndarray
    y_val: np.ndarray
    true_weights: np.ndarray
    global_params: ParameterVector
    store: MetricsStore
    permutation: list[int] = field(default_factory=list)
    sim_time: float = 0.0
    logs: list[RoundLog] = field(default_factory=list)


def _client_dataset(config: FederationConfig, rng: np.random.Generator, true_w: np.ndarray, n_samples: int):
    direction = rng.standard_normal(config.dim)
    direction /= np.linalg.norm(direction)
    X = rng.standard_normal((n_samples, config.dim)) + config.heterogeneity * direction
    y = X @ true_w + config.noise * rng.standard_normal(n_samples)
    return X, y


def make_federation(config: FederationConfig) -> Federation:
    seed = config.seed
    task_rng = np.random.default_rng([seed, _TASK_STREAM])
    true_w = task_rng.uniform(0.5, 2.0, config.dim) * task_rng.choice([-1.0, 1.0], config.dim)

    val_rng = np.random.default_rng([seed, _VALIDATION_STREAM])
    X_val = val_rng.standard_normal((config.validation_size, config.dim))
    y_val = X_val @ true_w + config.noise * val_rng.standard_normal(config.validation_size)

    s, j = config.samples_per_collaborator, config.sample_jitter
    lo, hi = max(1, int(round(s * (1 - j)))), max(1, int(round(s * (1 + j))))
    lo_speed, hi_speed = config.speed_range

    collaborators = []
    shared = None
    for cid in range(config.n_collaborators):
        # per-id streams: construction order cannot influence any client
        rng = np.random.default_rng([seed, 100, 0 if config.shared_data else cid])
        n_samples = int(rng.integers(lo, hi + 1))
        speed = float(rng.uniform(lo_speed, hi_speed))
        if config.shared_data:
            if shared is None:
                shared = _client_dataset(config, rng, true_w, n_samples)
            X, y = shared
        else:
            X, y = _client_dataset(config, rng, true_w, n_samples)
        collaborators.append(SimCollaborator(cid, X, y, speed))

    return Federation(
        config=config,
        collaborators=collaborators,
        X_val=X_val,
        y_val=y_val,
        true_weights=true_w,
        global_params=ParameterVector(np.zeros(config.dim)),
        store=MetricsStore(config.n_collaborators),
        permutation=make_permutation(config.n_collaborators, seed),
    )


def mse(params, X: np.ndarray, y: np.ndarray) -> float:
    r = X @ np.asarray(params, dtype=np.float64) - y
    return float(r @ r / y.size)


def mse_gradient(params, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    w = np.asarray(params, dtype=np.float64)
    return 2.0 / y.size * (X.T @ (X @ w - y))


def local_train(
    collaborator: SimCollaborator,
    global_params: ParameterVector,
    learning_rate: float,
    epochs: int,
) -> tuple[ParameterVector, float]:
    """Full-batch gradient descent on the collaborator's mean squared error."""
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    w = np.array(global_params, dtype=np.float64)
    # overflow is reported as DivergenceError, not as numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(epochs):
            g = mse_gradient(w, collaborator.X, collaborator.y)
            if not np.all(np.isfinite(g)):
                raise DivergenceError()
            w = w - learning_rate * g
            if not np.all(np.isfinite(w)):
                raise DivergenceError()
        loss = mse(w, collaborator.X, collaborator.y)
    if not np.isfinite(loss):
        raise DivergenceError()
    return ParameterVector(w), loss


def validate(params, X_val: np.ndarray, y_val: np.ndarray) -> tuple[float, float]:
    """Return ``(performance_score, loss)`` with score = 1 / (1 + MSE)."""
    loss = mse(params, X_val, y_val)
    return 1.0 / (1.0 + loss), loss


def simulate_duration(collaborator: SimCollaborator, epochs: int, overhead: float = 1.0) -> float:
    return epochs * collaborator.sample_count / collaborator.speed_factor + overhead


def _train_one(fed: Federation, cid: int):
    cfg = fed.config
    collab = fed.collaborators[cid]
    params, _ = local_train(collab, fed.global_params, cfg.learning_rate, cfg.epochs_per_round)
    metrics = validate(params, fed.X_val, fed.y_val)
    duration = simulate_duration(collab, cfg.epochs_per_round, cfg.comm_overhead)
    return CollaboratorUpdate(cid, params, collab.sample_count), metrics, duration


def run_round(fed: Federation, r: int, executor: ThreadPoolExecutor | None = None) -> RoundLog:
    cfg = fed.config
    decision = select(cfg.policy, fed.store, r, cfg.n_collaborators, cfg.fraction, cfg.seed, fed.permutation)
    expected = selection_count(cfg.n_collaborators, cfg.fraction)
    if len(decision.selected_ids) != expected:
        raise RuntimeError(f"selected {len(decision.selected_ids)} collaborators, expected {expected}")

    ids = list(decision.selected_ids)
    if executor is None:
        results = [_train_one(fed, cid) for cid in ids]
    else:
        # map keeps input order, so results are independent of scheduling
        results = list(executor.map(lambda cid: _train_one(fed, cid), ids))

    updates = [res[0] for res in results]
    metrics = {cid: res[1] for cid, res in zip(ids, results)}
    durations = {cid: res[2] for cid, res in zip(ids, results)}

    new_params, weights = aggregate(cfg.aggregator, updates, cfg.epsilon, cfg.agg_mode)
    fed.global_params = new_params
    score, loss = validate(new_params, fed.X_val, fed.y_val)
    record_round(fed.store, r, decision, metrics, durations)

    round_time = max(durations.values())
    fed.sim_time += round_time
    log = RoundLog(
        round=r,
        selected_ids=ids,
        policy=decision.policy,
        mode=decision.mode,
        similarity_weights=dict(weights.similarity),
        sample_weights=dict(weights.sample),
        aggregation_weights=dict(weights.combined),
        performance_score=score,
        loss=loss,
        duration=round_time,
        sim_time=fed.sim_time,
    )
    fed.logs.append(log)
    logger.info("round %d %s score=%.6f loss=%.6f", r, decision.mode, score, loss)
    return log


def run_federation(config: FederationConfig, federation: Federation | None = None) -> list[RoundLog]:
    """Run all configured rounds; returns one log per round.

    Pass ``federation`` to keep access to the final state (store, params).
    """
    fed = federation if federation is not None else make_federation(config)
    executor = ThreadPoolExecutor(max_workers=config.workers) if config.workers > 1 else None
    try:
        for r in range(1, config.rounds + 1):
            try:
                run_round(fed, r, executor)
            except Exception as exc:
                raise RoundError(r, exc) from exc
    finally:
        if executor is not None:
            executor.shutdown()
    return list(fed.logs)


def final_metrics(logs: Sequence[RoundLog]) -> dict:
    last = logs[-1]
    return {
        "rounds": len(logs),
        "final_performance_score": last.performance_score,
        "final_loss": last.loss,
        "sim_time": last.sim_time,
    }
