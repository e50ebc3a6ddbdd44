"""Geometry of the flat n-torus used as the continuous message space.

Messages are points in [-1, 1)^n with -1 and 1 identified per component,
so each component lives on a circle of circumference 2. Distances use the
wrap-around (circle) metric per component, combined Euclidean-style.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PERIOD = 2.0


@dataclass(frozen=True)
class TorusMessage:
    """A canonical point on the n-torus; every component lies in [-1, 1)."""

    components: np.ndarray

    @property
    def n(self) -> int:
        return int(self.components.size)

    def __post_init__(self):
        comp = np.asarray(self.components, dtype=np.float64)
        if comp.ndim != 1 or comp.size == 0:
            raise ValueError("message components must form a non-empty 1-d vector")
        if not np.all(np.isfinite(comp)):
            raise ValueError("message components must be finite")
        object.__setattr__(self, "components", comp)


def wrap(raw) -> TorusMessage:
    """Reduce raw coordinates modulo the period into [-1, 1).

    Idempotent, and identifies the endpoints: wrap([1.0]) == wrap([-1.0]).
    """
    arr = np.asarray(raw, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("expected a non-empty 1-d coordinate vector")
    if not np.all(np.isfinite(arr)):
        raise ValueError("coordinates must be finite")
    return TorusMessage(((arr + 1.0) % PERIOD) - 1.0)


def _canonical(point) -> np.ndarray:
    if isinstance(point, TorusMessage):
        return point.components
    return wrap(point).components


def distance(a, b) -> float:
    """Toroidal distance sqrt(sum_i min(|a_i - b_i|, 2 - |a_i - b_i|)^2).

    Accepts TorusMessage or raw coordinate vectors; raw inputs are wrapped
    first. Symmetric, bounded by sqrt(n), and zero iff a and b are the same
    torus point. The squared sum is accumulated in float64.
    """
    ca, cb = _canonical(a), _canonical(b)
    if ca.shape != cb.shape:
        raise ValueError(f"dimension mismatch: {ca.shape} vs {cb.shape}")
    delta = np.abs(ca - cb)
    per_comp = np.minimum(delta, PERIOD - delta)
    return float(np.sqrt(np.sum(per_comp * per_comp)))


def pairwise_distances(batch) -> np.ndarray:
    """All-pairs toroidal distances for a B x n batch of message points.

    Entry (i, j) with i < j holds distance(row_i, row_j). The diagonal and
    the lower triangle are excluded pairs, flagged with +inf (the encoding
    the repulsion loss uses: an infinite distance contributes nothing).
    """
    arr = np.asarray(batch, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError("expected a non-empty B x n matrix of message points")
    if not np.all(np.isfinite(arr)):
        raise ValueError("message points must be finite")
    arr = ((arr + 1.0) % PERIOD) - 1.0
    delta = np.abs(arr[:, None, :] - arr[None, :, :])
    per_comp = np.minimum(delta, PERIOD - delta)
    dist = np.sqrt(np.sum(per_comp * per_comp, axis=-1))
    dist[np.tril_indices(arr.shape[0])] = np.inf
    return dist
