"""Non-negative matrix factorization with Lee-Seung multiplicative updates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_DELTA = 1e-9


@dataclass(frozen=True)
class FactorizationResult:
    """Factors of ``V ~= W @ H``.

    ``error_trace[0]`` is the Frobenius error of the random initialization and
    ``error_trace[i]`` the error after ``i`` full (H, W) update sweeps.
    Components are ordered by the Frobenius norm of their rank-one term
    ``outer(W[:, j], H[j])``, largest first.
    """

    W: np.ndarray
    H: np.ndarray
    error_trace: tuple[float, ...]
    iterations_run: int

    @property
    def error(self) -> float:
        return self.error_trace[-1]


def _frob(V: np.ndarray, W: np.ndarray, H: np.ndarray) -> float:
    return float(np.linalg.norm(V - W @ H))


def factorize(
    V,
    k: int = 2,
    max_iters: int = 500,
    tol: float = 1e-6,
    seed: int = 0,
    delta: float = DEFAULT_DELTA,
    callback=None,
) -> FactorizationResult:
    """Factor a nonnegative (n, m) matrix into W (n, k) and H (k, m).

    Stops once the relative improvement of the Frobenius error drops below
    ``tol`` or after ``max_iters`` sweeps. ``callback(it, W, H)``, if given,
    is called after every sweep; tests use it to watch intermediate factors.
    """
    V = np.asarray(V, dtype=np.float64)
    if V.ndim != 2:
        raise ValueError("expected a 2-D matrix")
    n, m = V.shape
    if not 1 <= k <= min(n, m):
        raise ValueError(f"k must be in [1, {min(n, m)}], got {k}")
    if not np.all(np.isfinite(V)):
        raise ValueError("matrix contains non-finite values")
    if np.any(V < 0):
        raise ValueError("matrix not nonnegative")

    rng = np.random.default_rng(seed)
    # uniform on (0, 1]; zeros would be fixed points of the updates
    W = 1.0 - rng.random((n, k))
    H = 1.0 - rng.random((k, m))

    trace = [_frob(V, W, H)]
    it = 0
    while it < max_iters:
        H = H * (W.T @ V) / (W.T @ W @ H + delta)
        W = W * (V @ H.T) / (W @ H @ H.T + delta)
        it += 1
        err = _frob(V, W, H)
        trace.append(err)
        if callback is not None:
            callback(it, W, H)
        prev = trace[-2]
        if err == 0.0 or (prev > 0.0 and (prev - err) / prev < tol):
            break

    strength = np.array([np.linalg.norm(W[:, j]) * np.linalg.norm(H[j]) for j in range(k)])
    order = np.argsort(-strength, kind="stable")
    return FactorizationResult(
        W=np.ascontiguousarray(W[:, order]),
        H=np.ascontiguousarray(H[order]),
        error_trace=tuple(trace),
        iterations_run=it,
    )


def rank_by_first_factor(result: FactorizationResult) -> list[int]:
    """Row indices by descending first latent score; ties by ascending index."""
    scores = result.W[:, 0]
    return sorted(range(scores.size), key=lambda i: (-scores[i], i))
