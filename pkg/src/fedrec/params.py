"""Flat parameter vectors exchanged between collaborators and the server."""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np


class DimensionMismatchError(ValueError):
    """Raised when parameter vectors of different lengths are combined."""

    def __init__(self, msg: str = "dimension mismatch") -> None:
        super().__init__(msg)


class ParameterVector:
    """Immutable, finite, one-dimensional float64 parameter vector.

    The wrapped array is marked read-only, so ``len(p)`` can never change and
    the values can be shared between workers without copying.
    """

    __slots__ = ("_values",)

    def __init__(self, values: Iterable[float] | np.ndarray) -> None:
        arr = np.array(values, dtype=np.float64).reshape(-1)
        if arr.size == 0:
            raise ValueError("parameter vector must be non-empty")
        if not np.all(np.isfinite(arr)):
            raise ValueError("parameter vector contains non-finite values")
        arr.setflags(write=False)
        self._values = arr

    @property
    def values(self) -> np.ndarray:
        return self._values

    def __len__(self) -> int:
        return self._values.size

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self._values
        return self._values.astype(dtype)

    def __iter__(self):
        return iter(self._values.tolist())

    def __eq__(self, other: object) -> bool:
        if isinstance(other, ParameterVector):
            return np.array_equal(self._values, other._values)
        return NotImplemented

    def __hash__(self) -> int:
        return hash(self._values.tobytes())

    def __repr__(self) -> str:
        return f"ParameterVector({self._values.tolist()!r})"

    def tolist(self) -> list[float]:
        return self._values.tolist()


def as_params(p: ParameterVector | Sequence[float] | np.ndarray) -> ParameterVector:
    return p if isinstance(p, ParameterVector) else ParameterVector(p)


def stack(params: Sequence[ParameterVector | Sequence[float] | np.ndarray]) -> np.ndarray:
    """Stack vectors into an (n, d) array, checking that all lengths agree."""
    if len(params) == 0:
        raise ValueError("no collaborators")
    vecs = [as_params(p).values for p in params]
    d = vecs[0].size
    if any(v.size != d for v in vecs):
        raise DimensionMismatchError()
    return np.vstack(vecs)


def mean(params: Sequence[ParameterVector | Sequence[float] | np.ndarray]) -> ParameterVector:
    """Elementwise arithmetic mean of a list of parameter vectors.

    Computed as ``p_0 + sum(p_i - p_0) / n`` so that n copies of the same
    vector average back to that vector bit for bit.
    """
    arr = stack(params)
    ref = arr[0]
    return ParameterVector(ref + (arr - ref).sum(axis=0) / arr.shape[0])


def l1_distance(a: ParameterVector | Sequence[float], b: ParameterVector | Sequence[float]) -> float:
    """Sum of absolute coordinate differences."""
    av, bv = as_params(a).values, as_params(b).values
    if av.size != bv.size:
        raise DimensionMismatchError()
    return float(np.abs(av - bv).sum())


def l2_distance(a: ParameterVector | Sequence[float], b: ParameterVector | Sequence[float]) -> float:
    av, bv = as_params(a).values, as_params(b).values
    if av.size != bv.size:
        raise DimensionMismatchError()
    return float(np.sqrt(np.square(av - bv).sum()))
