"""Plug-in sparsity estimates ``s_hat`` and ``eta_hat = s_hat / n``."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DomainError, as_counts

__all__ = [
    "SparsityEstimate",
    "estimate_sparsity",
    "estimate_sparsity_two_cluster",
    "estimate_sparsity_per_period",
    "estimate_by_method",
]


@dataclass(frozen=True)
class SparsityEstimate:
    s_hat: int
    n: int
    method: str

    @property
    def eta_hat(self) -> float:
        return self.s_hat / self.n


def estimate_sparsity(x) -> SparsityEstimate:
    """``s_hat = max(1, #{i : x_i >= 1})``."""
    x = as_counts(x)
    return SparsityEstimate(max(1, int(np.count_nonzero(x))), x.size, "count-nonzero")


def _best_two_means_split(values):
    """Size of the lower cluster for the SSE-optimal split of sorted ``values``."""
    v = np.sort(values.astype(float))
    n = v.size
    csum = np.cumsum(v)
    csq = np.cumsum(v * v)
    k = np.arange(1, n)
    # only split between distinct values; equal counts stay together
    k = k[v[k - 1] < v[k]]
    left_sse = csq[k - 1] - csum[k - 1] ** 2 / k
    right_n = n - k
    right_sum = csum[-1] - csum[k - 1]
    right_sse = (csq[-1] - csq[k - 1]) - right_sum ** 2 / right_n
    return int(k[np.argmin(left_sse + right_sse)])


def estimate_sparsity_two_cluster(x) -> SparsityEstimate:
    """Upper-cluster size of the exact 1-d two-means split of the counts.

    Deterministic sorted-split search; constant inputs fall back to
    :func:`estimate_sparsity`.
    """
    x = as_counts(x)
    if x.size < 2:
        raise DomainError("two-cluster estimate needs n >= 2")
    if np.all(x == x[0]):
        fallback = estimate_sparsity(x)
        return SparsityEstimate(fallback.s_hat, x.size, "two-cluster")
    lower = _best_two_means_split(x)
    return SparsityEstimate(max(1, x.size - lower), x.size, "two-cluster")


def estimate_sparsity_per_period(periods) -> SparsityEstimate:
    """Mean over periods of ``#{i : x_i > 1}``, rounded half up and floored at 1.

    Note the strict ``> 1``, unlike :func:`estimate_sparsity`.
    """
    periods = [as_counts(p) for p in periods]
    if not periods:
        raise DomainError("at least one period is required")
    n = periods[0].size
    if any(p.size != n for p in periods):
        raise DomainError("all periods must have the same length")
    mean_count = float(np.mean([np.count_nonzero(p > 1) for p in periods]))
    return SparsityEstimate(max(1, math.floor(mean_count + 0.5)), n, "per-period-mean")


def estimate_by_method(x, method: str = "count", periods=None) -> SparsityEstimate:
    """Dispatch on ``count | count-gt1 | kmeans2 | fixed:<s>``."""
    x = as_counts(x)
    if method == "count":
        return estimate_sparsity(x)
    if method == "count-gt1":
        return estimate_sparsity_per_period(periods if periods is not None else [x])
    if method == "kmeans2":
        return estimate_sparsity_two_cluster(x)
    if method.startswith("fixed:"):
        try:
            s = int(method.split(":", 1)[1])
        except ValueError:
            raise DomainError(f"bad sparsity spec {method!r}") from None
        if not (1 <= s <= x.size):
            raise DomainError(f"fixed sparsity must lie in [1, n], got {s}")
        return SparsityEstimate(s, x.size, "fixed")
    raise DomainError(f"unknown sparsity method {method!r}")
