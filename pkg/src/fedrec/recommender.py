"""Collaborator history and per-round selection policies.

The recommender policy factorizes a normalized (collaborator x metric) matrix
and ranks collaborators by their score on the dominant latent component.
Even rounds take the top of the ranking, odd rounds the bottom. Without
history for at least two collaborators it falls back to uniform sampling.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Mapping, Sequence

import numpy as np

from fedrec.nnmf import FactorizationResult, factorize, rank_by_first_factor

logger = logging.getLogger(__name__)

POLICIES = ("recommender", "sliding-window", "random")

EXPLOIT_TOP = "exploit-top"
EXPLORE_BOTTOM = "explore-bottom"
FALLBACK_RANDOM = "fallback-random"
SLIDING_WINDOW = "sliding-window"
RANDOM = "random"

METRIC_COLUMNS = ("performance_score", "loss", "selection_frequency", "total_contribution_time")
LOSS_COLUMN = 1


@dataclass(frozen=True)
class CollaboratorRecord:
    id: int
    performance_score: float
    loss: float
    selection_frequency: int = 0
    total_contribution_time: float = 0.0

    def row(self) -> list[float]:
        return [self.performance_score, self.loss, float(self.selection_frequency), self.total_contribution_time]


@dataclass(frozen=True)
class SelectionDecision:
    round: int
    selected_ids: tuple[int, ...]
    policy: str
    mode: str
    factorization: FactorizationResult | None = None


@dataclass
class StoreEntry:
    round: int
    id: int
    performance_score: float | None
    loss: float | None
    selected: int
    duration: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "round": self.round,
                "id": self.id,
                "performance_score": self.performance_score,
                "loss": self.loss,
                "selected": self.selected,
                "duration": self.duration,
            },
            sort_keys=True,
        )


@dataclass
class MetricsStore:
    """Append-only per-round history of every collaborator.

    One entry per collaborator per recorded round. Collaborators that were
    not selected carry ``None`` metrics and zero duration.
    """

    n: int
    entries: list[StoreEntry] = field(default_factory=list)

    def records(self) -> dict[int, CollaboratorRecord]:
        """Latest observed metrics plus cumulative frequency and time for
        every collaborator that has been observed at least once."""
        latest: dict[int, tuple[float, float]] = {}
        freq = [0] * self.n
        time = [0.0] * self.n
        for e in sorted(self.entries, key=lambda e: (e.round, e.id)):
            if e.selected:
                freq[e.id] += 1
                time[e.id] += e.duration
            if e.performance_score is not None and e.loss is not None:
                latest[e.id] = (e.performance_score, e.loss)
        return {
            cid: CollaboratorRecord(cid, score, loss, freq[cid], time[cid])
            for cid, (score, loss) in sorted(latest.items())
        }

    def dump(self, fh: IO[str]) -> None:
        for e in self.entries:
            fh.write(e.to_json() + "\n")

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            self.dump(fh)

    @classmethod
    def load(cls, path: str | Path, n: int) -> "MetricsStore":
        store = cls(n)
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    store.entries.append(StoreEntry(**json.loads(line)))
        return store


def selection_count(n: int, fraction: float) -> int:
    """ceil(fraction * n), clamped to [1, n]."""
    if n <= 0:
        raise ValueError("need at least one collaborator")
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction!r}")
    # absorb representation error such as 0.1 * 30 == 3.0000000000000004
    return min(n, max(1, math.ceil(fraction * n - 1e-9)))


def round_rng(seed: int, round: int) -> np.random.Generator:
    return np.random.default_rng([seed, round])


def normalize_metrics(records: Sequence[CollaboratorRecord]) -> np.ndarray:
    """Min-max normalize each metric column to [0, 1].

    Constant columns map to 0.5. The loss column is flipped (``1 - x``) so
    that larger means better in every column.
    """
    if len(records) == 0:
        raise ValueError("no records")
    M = np.array([r.row() for r in records], dtype=np.float64)
    lo, hi = M.min(axis=0), M.max(axis=0)
    span = hi - lo
    out = np.full_like(M, 0.5)
    varying = span > 0
    out[:, varying] = (M[:, varying] - lo[varying]) / span[varying]
    out[:, LOSS_COLUMN] = 1.0 - out[:, LOSS_COLUMN]
    return np.clip(out, 0.0, 1.0)


def build_records(store: MetricsStore) -> list[CollaboratorRecord]:
    """One record per collaborator, imputing column means for the unseen."""
    seen = store.records()
    score_mean = float(np.mean([r.performance_score for r in seen.values()]))
    loss_mean = float(np.mean([r.loss for r in seen.values()]))
    out = []
    for cid in range(store.n):
        if cid in seen:
            out.append(seen[cid])
        else:
            out.append(CollaboratorRecord(cid, score_mean, loss_mean, 0, 0.0))
    return out


def select_random(n: int, count: int, round: int, seed: int, policy: str = RANDOM, mode: str = RANDOM) -> SelectionDecision:
    if not 1 <= count <= n:
        raise ValueError(f"count must be in [1, {n}], got {count}")
    picked = round_rng(seed, round).choice(n, size=count, replace=False)
    return SelectionDecision(round, tuple(sorted(int(i) for i in picked)), policy, mode)


def make_permutation(n: int, seed: int) -> list[int]:
    return [int(i) for i in np.random.default_rng([seed, 0x5EED]).permutation(n)]


def select_sliding_window(permutation: Sequence[int], round: int, count: int) -> SelectionDecision:
    n = len(permutation)
    if not 1 <= count <= n:
        raise ValueError(f"count must be in [1, {n}], got {count}")
    start = ((round - 1) * count) % n
    ids = [permutation[(start + j) % n] for j in range(count)]
    return SelectionDecision(round, tuple(sorted(ids)), "sliding-window", SLIDING_WINDOW)


def select_recommender(
    store: MetricsStore,
    round: int,
    n: int,
    fraction: float,
    seed: int,
    k: int = 2,
) -> SelectionDecision:
    if round < 1:
        raise ValueError("round must be >= 1")
    count = selection_count(n, fraction)

    def fallback() -> SelectionDecision:
        return select_random(n, count, round, seed, policy="recommender", mode=FALLBACK_RANDOM)

    if len(store.records()) < 2:
        return fallback()

    try:
        V = normalize_metrics(build_records(store))
        # seed does not depend on the round: a fixed history gives one ranking
        result = factorize(V, k=min(k, *V.shape), seed=seed)
        if not (np.all(np.isfinite(result.W)) and np.all(np.isfinite(result.H))):
            raise FloatingPointError("non-finite factors")
    except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        logger.warning("round %d: NNMF selection failed (%s); using random fallback", round, exc)
        return fallback()

    ranking = rank_by_first_factor(result)
    if round % 2 == 0:
        ids, mode = ranking[:count], EXPLOIT_TOP
    else:
        ids, mode = ranking[-count:], EXPLORE_BOTTOM
    return SelectionDecision(round, tuple(sorted(ids)), "recommender", mode, result)


def record_round(
    store: MetricsStore,
    round: int,
    decision: SelectionDecision,
    metrics: Mapping[int, tuple[float, float]],
    durations: Mapping[int, float],
) -> None:
    """Append one entry per collaborator for ``round``.

    ``metrics`` maps id -> (performance_score, loss) and ``durations`` id ->
    simulated seconds; both are read only for the selected collaborators.
    """
    if any(e.round == round for e in store.entries):
        raise ValueError(f"round {round} already recorded")
    chosen = set(decision.selected_ids)
    for cid in range(store.n):
        if cid in chosen:
            score, loss = metrics[cid]
            store.entries.append(StoreEntry(round, cid, float(score), float(loss), 1, float(durations[cid])))
        else:
            store.entries.append(StoreEntry(round, cid, None, None, 0, 0.0))


def select(
    policy: str,
    store: MetricsStore,
    round: int,
    n: int,
    fraction: float,
    seed: int,
    permutation: Sequence[int] | None = None,
) -> SelectionDecision:
    count = selection_count(n, fraction)
    if policy == "recommender":
        return select_recommender(store, round, n, fraction, seed)
    if policy == "sliding-window":
        return select_sliding_window(permutation if permutation is not None else make_permutation(n, seed), round, count)
    if policy == "random":
        return select_random(n, count, round, seed)
    raise ValueError(f"unknown policy {policy!r}; expected one of {POLICIES}")

