"""Closed-form Bayes predictive densities and posterior means under spike-and-slab priors.

Under the improper prior ``delta_0 + h * lambda**(kappa-1)`` each coordinate
of the Bayes predictive density is a zero-inflated negative binomial: a
spike at zero with weight ``omega_i`` (non-zero only when ``x_i == 0``) and a
negative binomial with size ``x_i + kappa`` and success probability
``r_i / (r_i + 1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
from scipy.special import expit, gammaln, logsumexp

from .core import (
    DomainError,
    GeneralSlab,
    IntegrabilityError,
    PowerSlab,
    SpikeSlabPrior,
    as_counts,
    as_ratios,
)
from .quadrature import integrate, integrate_from_zero, integrate_to_infinity

__all__ = [
    "PredictiveDensity",
    "PoissonPlugin",
    "fit",
    "spike_weight",
    "posterior_mean",
    "slab_integral",
    "log_slab_integral",
    "SlabIntegralTable",
    "posterior_mean_general",
    "TailRobustness",
    "tail_robustness_diagnostic",
]


def _y_cutoff(mean):
    return np.ceil(mean + 20.0 * np.sqrt(mean + 1.0) + 60.0).astype(np.int64)


_LOG_TAIL = math.log(1e-13)


def _nb_log_tail_bound(y, a, r):
    # Chernoff bound on P(Y >= y) for NB(size a, success r/(r+1)), y > mean
    z = y / (y + a)
    return a * (np.log(r / (r + 1.0)) - np.log1p(-z)) - y * (np.log(z) + np.log1p(r))


def _nb_cutoff(a, r):
    """``_y_cutoff`` of the mean, extended until the NB tail bound is below 1e-13.

    Small ratios make the tail nearly geometric with a slow decay, which the
    mean-based cutoff alone does not cover.
    """
    a = np.asarray(a, dtype=float)
    r = np.asarray(r, dtype=float)
    lo = _y_cutoff(a / r).astype(float)
    ok = _nb_log_tail_bound(lo, a, r) <= _LOG_TAIL
    if np.all(ok):
        return lo.astype(np.int64)
    hi = lo.copy()
    while True:
        bad = _nb_log_tail_bound(hi, a, r) > _LOG_TAIL
        if not np.any(bad):
            break
        hi = np.where(bad, 2.0 * hi, hi)
    # bisect the integer cutoff where the extension is needed
    lo = np.where(ok, hi, lo)
    while np.any(hi - lo > 1):
        mid = np.floor((lo + hi) / 2.0)
        good = _nb_log_tail_bound(mid, a, r) <= _LOG_TAIL
        hi = np.where(good, mid, hi)
        lo = np.where(good, lo, mid)
    return hi.astype(np.int64)


class _CoordinateDensity:
    """Shared machinery for product densities over independent count coordinates.

    Subclasses provide ``n``, ``mean()``, ``y_max`` and ``_log_pmf(idx, y)``
    returning log-probabilities for coordinates ``idx`` at counts ``y``
    (broadcast together).
    """

    n: int

    def coord_log_pmf(self, i: int, y) -> np.ndarray:
        self._check_index(i)
        y = np.asarray(y)
        return self._log_pmf(np.full(y.shape, i), y)

    def coord_pmf(self, i: int, y):
        out = np.exp(self.coord_log_pmf(i, y))
        return float(out) if out.ndim == 0 else out

    def log_pmf(self, y) -> np.ndarray:
        """Per-coordinate log-probabilities of the vector ``y``."""
        y = self._check_vector(y)
        return self._log_pmf(np.arange(self.n), y)

    def joint_log_pmf(self, y) -> float:
        """Log-probability of ``y``; ``-inf`` when any coordinate has zero mass."""
        lp = self.log_pmf(y)
        if np.any(np.isneginf(lp)):
            return -math.inf
        return float(math.fsum(lp))

    @cached_property
    def _cdf_table(self) -> np.ndarray:
        width = int(np.max(self.y_max)) + 1
        ys = np.arange(width)[None, :]
        idx = np.arange(self.n)[:, None]
        table = np.cumsum(np.exp(self._log_pmf(idx, ys)), axis=1)
        table.setflags(write=False)
        return table

    def cdf(self, y) -> np.ndarray:
        """Per-coordinate CDF at ``y`` (vector of length n)."""
        y = self._check_vector(y)
        table = self._cdf_table
        return table[np.arange(self.n), np.minimum(y, table.shape[1] - 1)]

    def quantiles(self, p) -> np.ndarray:
        """Smallest ``y`` with ``CDF(y) >= p`` in every coordinate.

        ``p`` may be a scalar or a length-n vector.  Levels beyond the
        truncated mass map to the truncation point.
        """
        p = np.broadcast_to(np.asarray(p, dtype=float), (self.n,))
        if np.any(p < 0) or np.any(p > 1):
            raise DomainError("quantile level must lie in [0, 1]")
        table = self._cdf_table
        q = np.sum(table < p[:, None], axis=1)
        return np.minimum(q, table.shape[1] - 1)

    def coord_quantile(self, i: int, p: float) -> int:
        self._check_index(i)
        if not (0.0 <= p < 1.0):
            raise DomainError(f"quantile level must lie in [0, 1), got {p!r}")
        row = self._cdf_table[i]
        return int(min(np.sum(row < p), row.size - 1))

    def median(self) -> np.ndarray:
        return self.quantiles(0.5)

    def _check_index(self, i):
        if not (0 <= int(i) < self.n):
            raise IndexError(f"coordinate {i} out of range for n={self.n}")

    def _check_vector(self, y) -> np.ndarray:
        y = as_counts(y)
        if y.size != self.n:
            raise DomainError(f"expected a vector of length {self.n}, got {y.size}")
        return y


@dataclass(frozen=True, eq=False)
class PredictiveDensity(_CoordinateDensity):
    """Fitted zero-inflated negative-binomial predictive density.

    Build with :func:`fit`.  Immutable; all evaluators are pure.
    """

    x: np.ndarray = field(repr=False)
    ratios: np.ndarray = field(repr=False)
    kappa: float
    scale: float
    log_omega: np.ndarray = field(repr=False)
    log1m_omega: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return int(self.x.size)

    @property
    def omega(self) -> np.ndarray:
        return np.exp(self.log_omega)

    @property
    def nb_size(self) -> np.ndarray:
        return self.x + self.kappa

    @property
    def nb_success(self) -> np.ndarray:
        return self.ratios / (self.ratios + 1.0)

    def mean(self) -> np.ndarray:
        return np.exp(self.log1m_omega) * self.nb_size / self.ratios

    @property
    def y_max(self) -> np.ndarray:
        return _nb_cutoff(self.nb_size, self.ratios)

    def p_zero(self) -> np.ndarray:
        return np.exp(self._log_pmf(np.arange(self.n), np.zeros(self.n, dtype=np.int64)))

    def _log_pmf(self, idx, y):
        idx, y = np.broadcast_arrays(np.asarray(idx), np.asarray(y))
        if np.any(y < 0):
            raise DomainError("counts must be non-negative")
        a = self.x[idx] + self.kappa
        r = self.ratios[idx]
        nb = (
            gammaln(a + y) - gammaln(y + 1.0) - gammaln(a)
            - a * np.log1p(1.0 / r) - y * np.log1p(r)
        )
        out = self.log1m_omega[idx] + nb
        spike = (y == 0) & (self.x[idx] == 0)
        if np.any(spike):
            out = np.where(spike, np.logaddexp(self.log_omega[idx], out), out)
        return out

    def sample(self, m: int, seed) -> np.ndarray:
        """Draw ``m`` predictive vectors, shape ``(m, n)``.

        Non-spike coordinates use the Gamma-Poisson mixture
        ``Poisson(Gamma(x + kappa, rate=r))``, valid for non-integer size.
        """
        m = int(m)
        if m < 1:
            raise DomainError("m must be >= 1")
        rng = np.random.default_rng(seed)
        u = rng.random((m, self.n))
        rows, cols = np.nonzero(u >= self.omega)
        # the gamma-poisson draw is only needed off the spike
        g = rng.gamma(self.nb_size[cols], 1.0 / self.ratios[cols])
        y = np.zeros((m, self.n), dtype=np.int64)
        y[rows, cols] = rng.poisson(g)
        return y


@dataclass(frozen=True, eq=False)
class PoissonPlugin(_CoordinateDensity):
    """Plug-in density ``prod_i Po(theta_hat_i)``; a point mass at 0 where ``theta_hat_i = 0``."""

    theta_hat: np.ndarray = field(repr=False)
    ratios: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        th = np.asarray(self.theta_hat, dtype=float)
        if th.ndim != 1 or not np.all(np.isfinite(th)) or np.any(th < 0):
            raise DomainError("plug-in means must be a finite non-negative vector")
        object.__setattr__(self, "theta_hat", th)

    @property
    def n(self) -> int:
        return int(self.theta_hat.size)

    def mean(self) -> np.ndarray:
        return self.theta_hat

    @property
    def y_max(self) -> np.ndarray:
        return _y_cutoff(self.theta_hat)

    def p_zero(self) -> np.ndarray:
        return np.exp(-self.theta_hat)

    def _log_pmf(self, idx, y):
        idx, y = np.broadcast_arrays(np.asarray(idx), np.asarray(y))
        lam = self.theta_hat[idx]
        with np.errstate(divide="ignore", invalid="ignore"):
            out = -lam + y * np.log(lam) - gammaln(y + 1.0)
        # a zero mean is a point mass at zero
        return np.where(lam == 0, np.where(y == 0, 0.0, -np.inf), out)

    def sample(self, m: int, seed) -> np.ndarray:
        rng = np.random.default_rng(seed)
        return rng.poisson(self.theta_hat, size=(int(m), self.n))


def _log_spike_odds(h, kappa, r):
    # log(h * Gamma(kappa) / r**kappa): log-odds of slab versus spike at x = 0
    return math.log(h) + gammaln(kappa) - kappa * np.log(r)


def spike_weight(h, kappa, r):
    """``omega = 1 / (1 + h Gamma(kappa) / r**kappa)`` for a zero count."""
    return expit(-_log_spike_odds(h, kappa, np.asarray(r, dtype=float)))


def fit(x, prior: SpikeSlabPrior, ratios) -> PredictiveDensity:
    """Bayes predictive density of ``y`` given ``x`` under the power-slab prior."""
    if not isinstance(prior, SpikeSlabPrior) or not prior.is_power:
        raise DomainError("closed-form fit requires a SpikeSlabPrior with a PowerSlab")
    x = as_counts(x)
    r = np.array(as_ratios(ratios, x.size), dtype=float)
    kappa = prior.slab.kappa
    lw = _log_spike_odds(prior.scale, kappa, r)
    zero = x == 0
    log_omega = np.where(zero, -np.logaddexp(0.0, lw), -np.inf)
    log1m = np.where(zero, -np.logaddexp(0.0, -lw), 0.0)
    for arr in (x, r, log_omega, log1m):
        arr.setflags(write=False)
    return PredictiveDensity(
        x=x, ratios=r, kappa=kappa, scale=prior.scale,
        log_omega=log_omega, log1m_omega=log1m,
    )


def posterior_mean(x, prior: SpikeSlabPrior, ratios=None, t_override=None) -> np.ndarray:
    """Posterior mean of ``theta`` given ``x ~ Po(t * theta)`` under the power slab.

    ``(kappa/t) * expit(log(h Gamma(kappa) / t**kappa))`` at ``x = 0`` and
    ``(x + kappa) / t`` otherwise.  ``t`` is ``ratios`` unless ``t_override``
    is given.
    """
    if not prior.is_power:
        raise DomainError("closed-form posterior mean requires a PowerSlab")
    x = as_counts(x)
    if t_override is not None:
        t = as_ratios(t_override, x.size)
    elif ratios is None:
        raise DomainError("either ratios or t_override is required")
    else:
        t = as_ratios(ratios, x.size)
    kappa = prior.slab.kappa
    at_zero = kappa / t * expit(_log_spike_odds(prior.scale, kappa, t))
    return np.where(x == 0, at_zero, (x + kappa) / t)


def log_slab_integral(slab, s: float, t: float, tol: float = 1e-10) -> float:
    """``log`` of ``int_0^inf lambda**(s-1) exp(-t lambda) gamma(lambda) dlambda``.

    The integrand is rescaled by its value at the Gamma-kernel mode
    ``(s-1)/t`` so large ``s`` does not overflow.  The domain is split at 1
    (and at the mode when it exceeds 1); ``(0, 1]`` uses an exponential
    substitution and the tail the map ``lambda = a + u/(1-u)``.
    """
    s = float(s)
    t = float(t)
    if not s >= 1:
        raise DomainError(f"slab integral requires s >= 1, got {s!r}")
    if not (math.isfinite(t) and t > 0):
        raise DomainError(f"slab integral requires t > 0, got {t!r}")
    log_gamma = slab.log_density
    mode = (s - 1.0) / t

    def log_f(lam):
        lam = np.asarray(lam, dtype=float)
        return (s - 1.0) * np.log(lam) - t * lam + log_gamma(lam)

    ref = float(log_f(max(mode, 1.0)))
    if not math.isfinite(ref):
        raise IntegrabilityError("slab log-density is not finite at the reference point")

    def f(lam):
        with np.errstate(all="ignore"):
            return np.exp(log_f(lam) - ref)

    head, _ = integrate_from_zero(f, 1.0, rtol=tol)
    if mode > 1.0:
        body, _ = integrate(f, 1.0, mode, rtol=tol)
        tail, _ = integrate_to_infinity(f, mode, rtol=tol)
    else:
        body = 0.0
        tail, _ = integrate_to_infinity(f, 1.0, rtol=tol)
    total = head + body + tail
    if not (math.isfinite(total) and total > 0):
        raise IntegrabilityError(f"slab integral is not finite and positive: {total!r}")
    return ref + math.log(total)


def slab_integral(slab, s: float, t: float, tol: float = 1e-10) -> float:
    """``I(s; t) = int_0^inf lambda**(s-1) exp(-t lambda) gamma(lambda) dlambda``."""
    return math.exp(log_slab_integral(slab, s, t, tol))


class SlabIntegralTable:
    """Memoised log slab integrals for one slab at a fixed tolerance."""

    def __init__(self, slab, tol: float = 1e-10):
        self.slab = slab
        self.tol = tol
        self._cache: dict = {}

    def log_value(self, s, t) -> float:
        key = (float(s), float(t))
        if key not in self._cache:
            self._cache[key] = log_slab_integral(self.slab, key[0], key[1], self.tol)
        return self._cache[key]

    def value(self, s, t) -> float:
        return math.exp(self.log_value(s, t))

    def __len__(self):
        return len(self._cache)


def posterior_mean_general(x, slab: GeneralSlab, ratios, tol: float = 1e-10,
                           table: Optional[SlabIntegralTable] = None) -> np.ndarray:
    """Posterior mean under ``(1-eta) delta_0 + eta * gamma`` by slab quadrature.

    ``eta I(x+2; t) / ((1-eta) 0**x + eta I(x+1; t))`` per coordinate.
    """
    x = as_counts(x)
    t = as_ratios(ratios, x.size)
    table = table or SlabIntegralTable(slab, tol)
    eta = slab.mixing_weight
    out = np.empty(x.size)
    cache = {}
    for i, (xi, ti) in enumerate(zip(x.tolist(), t.tolist())):
        key = (xi, ti)
        if key not in cache:
            upper = table.log_value(xi + 2, ti)
            lower = table.log_value(xi + 1, ti)
            if xi == 0:
                denom = np.logaddexp(math.log1p(-eta), math.log(eta) + lower)
                cache[key] = math.exp(math.log(eta) + upper - denom)
            else:
                cache[key] = math.exp(upper - lower)
        out[i] = cache[key]
    return out


@dataclass(frozen=True)
class TailRobustness:
    x: np.ndarray
    ratios: np.ndarray
    verdict: str

    @property
    def robust(self) -> bool:
        return self.verdict == "robust"


def tail_robustness_diagnostic(mean_fn: Callable[[np.ndarray], np.ndarray], r: float,
                               x_grid=None, x_max: int = 1000) -> TailRobustness:
    """Relative deviation ``|mean(x) - x/r| / (x/r)`` of a posterior mean from ``x/r``.

    Robust iff the deviation at the largest grid point is below 0.01 and
    non-increasing over the top decade of the grid.
    """
    if x_grid is None:
        x_grid = np.unique(np.round(np.geomspace(1, x_max, 61)).astype(np.int64))
    x_grid = np.sort(as_counts(x_grid))
    x_grid = x_grid[x_grid >= 1]
    if x_grid.size == 0 or x_grid[-1] < 100:
        raise DomainError("tail diagnostic needs a grid reaching at least 100")
    unbiased = x_grid / float(r)
    ratios = np.abs(np.asarray(mean_fn(x_grid), dtype=float) - unbiased) / unbiased
    top = ratios[x_grid >= x_grid[-1] / 10.0]
    decreasing = bool(np.all(np.diff(top) <= 1e-12 * np.maximum(top[:-1], 1.0)))
    robust = ratios[-1] < 0.01 and decreasing
    return TailRobustness(x=x_grid, ratios=ratios, verdict="robust" if robust else "non-robust")
