"""Joint prediction sets calibrated on seeded predictive draws.

Two constructions are provided.  :func:`calibrate` builds a product of
per-coordinate equal-tail intervals, which gives coordinate-wise bounds.
:func:`calibrate_l1_ball` builds a ball in the (ratio-weighted) l1 distance
around the predictive mean; the simulation tables use it by default.

For the product sets all coordinates share one level ``beta``, the smallest
dyadic value (resolution ``2**-bits``) whose product set holds at least
``alpha`` of a seeded predictive sample.  Coverage is monotone in ``beta``,
so bisection finds that value exactly and sets are nested across ``alpha``
for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import DomainError, as_counts

__all__ = [
    "JointPredictionSet",
    "L1BallSet",
    "calibrate",
    "calibrate_l1_ball",
    "contains",
    "equal_tail_interval",
    "draw_thresholds",
    "weighted_l1_distance",
]


def _check(y, n):
    y = as_counts(y)
    if y.size != n:
        raise DomainError(f"expected length {n}, got {y.size}")
    return y


@dataclass(frozen=True)
class JointPredictionSet:
    """Product of integer intervals ``[lo_i, hi_i]``."""

    lo: np.ndarray = field(repr=False)
    hi: np.ndarray = field(repr=False)
    alpha: float
    beta: float
    achieved_coverage: float

    @property
    def n(self) -> int:
        return int(self.lo.size)

    def contains(self, y) -> bool:
        y = _check(y, self.n)
        return bool(np.all((self.lo <= y) & (y <= self.hi)))


@dataclass(frozen=True)
class L1BallSet:
    """``{y : sum_i w_i |y_i - center_i| <= radius}`` with ``w = r / mean(r)``."""

    center: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    radius: float
    alpha: float
    achieved_coverage: float

    @property
    def n(self) -> int:
        return int(self.center.size)

    def contains(self, y) -> bool:
        y = _check(y, self.n)
        return bool(weighted_l1_distance(y, self.center, self.weights) <= self.radius)


def weighted_l1_distance(y, center, weights):
    """Row-wise ``sum_i w_i |y_i - c_i|``; unit weights give the plain l1 distance."""
    return np.abs(np.asarray(y) - center) @ weights


def _tail(beta):
    return (1.0 - beta) / 2.0


def equal_tail_interval(density, beta: float):
    """Per-coordinate ``[q((1-beta)/2), q(1-(1-beta)/2)]``."""
    tail = _tail(beta)
    return density.quantiles(tail), density.quantiles(1.0 - tail)


def draw_thresholds(density, draws):
    """Per-draw ``(a, b)``: the draw lies in the level-``beta`` set iff ``tail <= a`` and ``tail < b``.

    With ``q(p)`` the smallest ``y`` having ``F(y) >= p``, ``y >= q(tail)``
    iff ``F(y) >= tail`` and ``y <= q(1 - tail)`` iff ``1 - F(y - 1) > tail``.
    Draws beyond the truncation point are never covered.
    """
    table = density._cdf_table
    width = table.shape[1]
    # column 0 holds F(-1) = 0 so both lookups are one flat take
    padded = np.hstack([np.zeros((density.n, 1)), table]).ravel()
    draws = np.asarray(draws)
    beyond = np.any(draws >= width, axis=1)
    flat = np.minimum(draws, width - 1) + (np.arange(density.n) * (width + 1))[None, :]
    a = np.min(np.take(padded, flat + 1), axis=1)
    b = 1.0 - np.max(np.take(padded, flat), axis=1)
    b[beyond] = 0.0
    return a, b


def calibrate(density, alpha: float, m: int = 20_000, seed=0, slack: float = 0.002,
              bits: int = 20) -> JointPredictionSet:
    """Calibrate a joint level-``alpha`` product set on ``m`` predictive draws.

    Bisection finds the smallest dyadic ``beta`` reaching ``alpha``.  Many
    coordinates can share a quantile (all zero counts at a common ratio), so
    one step in ``beta`` may move coverage well past ``alpha + slack``.  The
    coordinates that change over that last step are then raised one at a time
    in index order and the shortest prefix reaching ``alpha`` is kept.  The
    result is deterministic for a seed and nested in ``alpha``.
    """
    if not (0.0 < alpha < 1.0):
        raise DomainError(f"alpha must lie in (0, 1), got {alpha!r}")
    if int(m) < 1:
        raise DomainError("m must be >= 1")
    draws = density.sample(int(m), seed)
    a, b = draw_thresholds(density, draws)

    def coverage(beta):
        tail = _tail(beta)
        return float(np.mean((tail <= a) & (tail < b)))

    lo_k, hi_k = 0, 2 ** bits
    if coverage(0.0) >= alpha:
        hi_k = 0
    else:
        while hi_k - lo_k > 1:
            mid = (lo_k + hi_k) // 2
            if coverage(mid / 2 ** bits) >= alpha:
                hi_k = mid
            else:
                lo_k = mid
    beta = hi_k / 2 ** bits
    lo, hi = equal_tail_interval(density, beta)
    cov = coverage(beta)
    if hi_k > 0 and cov > alpha + slack:
        lo, hi, cov = _raise_prefix(density, draws, a, b, beta, lo_k / 2 ** bits, alpha)
    return JointPredictionSet(lo=lo, hi=hi, alpha=float(alpha), beta=beta,
                              achieved_coverage=cov)


def _raise_prefix(density, draws, a, b, beta, beta_below, alpha):
    lo, hi = equal_tail_interval(density, beta)
    lo0, hi0 = equal_tail_interval(density, beta_below)
    moved = np.flatnonzero((lo != lo0) | (hi != hi0))
    tail = _tail(beta)
    inside = (tail <= a) & (tail < b)
    sub = draws[:, moved]
    outside_below = (sub < lo0[moved]) | (sub > hi0[moved])
    # a draw inside the beta set is covered once every moved coordinate up to
    # the last one it violates at beta_below has been raised
    any_out = outside_below.any(axis=1)
    last = np.where(any_out, moved.size - 1 - np.argmax(outside_below[:, ::-1], axis=1), -1)
    need = np.where(inside, last + 1, moved.size + 1)
    cum = np.cumsum(np.bincount(need, minlength=moved.size + 2)) / draws.shape[0]
    k = int(np.argmax(cum[: moved.size + 1] >= alpha))
    lo_mix, hi_mix = lo0.copy(), hi0.copy()
    lo_mix[moved[:k]] = lo[moved[:k]]
    hi_mix[moved[:k]] = hi[moved[:k]]
    return lo_mix, hi_mix, float(cum[k])


def calibrate_l1_ball(density, alpha: float, m: int = 20_000, seed=0,
                      ratios=None) -> L1BallSet:
    """Smallest l1 ball about the predictive mean holding ``alpha`` of ``m`` draws.

    Distances are weighted by ``r_i / mean(r)`` when ``ratios`` is given.
    """
    if not (0.0 < alpha < 1.0):
        raise DomainError(f"alpha must lie in (0, 1), got {alpha!r}")
    if int(m) < 1:
        raise DomainError("m must be >= 1")
    center = np.asarray(density.mean(), dtype=float)
    if ratios is None:
        weights = np.ones(density.n)
    else:
        r = np.broadcast_to(np.asarray(ratios, dtype=float), (density.n,))
        weights = r / r.mean()
    dist = weighted_l1_distance(density.sample(int(m), seed), center, weights)
    radius = float(np.quantile(dist, alpha, method="inverted_cdf"))
    return L1BallSet(center=center, weights=weights, radius=radius, alpha=float(alpha),
                     achieved_coverage=float(np.mean(dist <= radius)))


def contains(pred_set, y) -> bool:
    """Membership of the count vector ``y`` in either kind of set."""
    return pred_set.contains(y)
