"""Model configuration: counts, sampling ratios, priors and the closed-form constants."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import stats
from scipy.special import gammaln

__all__ = [
    "DomainError",
    "IntegrabilityError",
    "as_counts",
    "SamplingRatios",
    "as_ratios",
    "PowerSlab",
    "GeneralSlab",
    "SpikeSlabPrior",
    "SparsitySpace",
    "ConstantsReport",
    "constant_c",
    "constant_k",
    "optimal_scale",
    "constants",
    "mcar_constants",
    "GammaSampling",
    "BinomialSampling",
    "MCEstimate",
    "expected_constant_under_g",
]


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of an operation."""


class IntegrabilityError(ArithmeticError):
    """Raised when a slab integral fails to converge."""


def _check_positive(name, value):
    value = float(value)
    if not math.isfinite(value) or value <= 0:
        raise DomainError(f"{name} must be positive and finite, got {value!r}")
    return value


def as_counts(x) -> np.ndarray:
    """Validate a count vector and return it as a 1-d int64 array."""
    arr = np.asarray(x)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1 or arr.size == 0:
        raise DomainError("count vector must be one-dimensional with length >= 1")
    if arr.dtype.kind == "f":
        if not np.all(np.isfinite(arr)) or np.any(arr != np.round(arr)):
            raise DomainError("counts must be integers")
    elif arr.dtype.kind not in "iub":
        raise DomainError(f"counts must be integers, got dtype {arr.dtype}")
    arr = arr.astype(np.int64)
    if np.any(arr < 0):
        raise DomainError("counts must be non-negative")
    return arr


@dataclass(frozen=True)
class SamplingRatios:
    """Ratio of current to future sampling intensity, scalar or per coordinate."""

    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.atleast_1d(np.asarray(self.values, dtype=float))
        if vals.ndim != 1 or vals.size == 0:
            raise DomainError("ratios must be a scalar or a non-empty 1-d vector")
        if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
            raise DomainError("ratios must be positive and finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def mode(self) -> str:
        return "scalar" if self.values.size == 1 else "per-coordinate"

    @property
    def is_constant(self) -> bool:
        return bool(np.all(self.values == self.values[0]))

    def broadcast(self, n: int) -> np.ndarray:
        if self.values.size == 1:
            return np.full(n, self.values[0])
        if self.values.size != n:
            raise DomainError(
                f"per-coordinate ratios have length {self.values.size}, expected {n}"
            )
        return self.values

    def __repr__(self):
        if self.mode == "scalar":
            return f"SamplingRatios({self.values[0]!r})"
        return f"SamplingRatios(n={self.values.size})"


def as_ratios(r, n: Optional[int] = None) -> np.ndarray:
    """Return ratios as a float vector, broadcast to length ``n`` when given."""
    if not isinstance(r, SamplingRatios):
        r = SamplingRatios(r)
    if n is None:
        return r.values
    return r.broadcast(n)


@dataclass(frozen=True)
class PowerSlab:
    """Improper slab proportional to lambda**(kappa - 1)."""

    kappa: float

    def __post_init__(self):
        object.__setattr__(self, "kappa", _check_positive("kappa", self.kappa))

    def density(self, lam):
        return np.asarray(lam, dtype=float) ** (self.kappa - 1.0)

    def log_density(self, lam):
        return (self.kappa - 1.0) * np.log(lam)


# log-grid used to spot-check the drift bound |lambda d/dlambda log gamma|
_DRIFT_GRID = np.geomspace(1e-6, 1e6, 200)
_DRIFT_STEP = 1e-5


@dataclass(frozen=True)
class GeneralSlab:
    """Slab density used in the eta-weighted spike-and-slab mixture.

    Parameters
    ----------
    density : callable
        Positive function on (0, inf); must accept numpy arrays.
    drift_bound : float or None
        Claimed bound on ``|lambda * d/dlambda log density|``.  Verified on a
        fixed 200-point log grid over [1e-6, 1e6] when given.  ``None`` skips
        the check (for slabs such as the Laplace slab that violate it).
    mixing_weight : float
        Slab weight ``eta`` in (0, 1).
    log_density : callable, optional
        Log of ``density``; derived from ``density`` when omitted.
    """

    density: Callable[[np.ndarray], np.ndarray]
    drift_bound: Optional[float] = None
    mixing_weight: float = 0.5
    log_density: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = "custom"

    def __post_init__(self):
        eta = float(self.mixing_weight)
        if not (0.0 < eta < 1.0):
            raise DomainError(f"mixing_weight must lie in (0, 1), got {eta!r}")
        object.__setattr__(self, "mixing_weight", eta)
        if self.log_density is None:
            dens = self.density
            object.__setattr__(
                self, "log_density", lambda lam: np.log(dens(np.asarray(lam, dtype=float)))
            )
        with np.errstate(divide="ignore", invalid="ignore"):
            log_vals = np.asarray(self.log_density(_DRIFT_GRID), dtype=float)
        if not np.all(np.isfinite(log_vals)):
            raise DomainError("slab density must be positive and finite on (0, inf)")
        if self.drift_bound is not None:
            bound = _check_positive("drift_bound", self.drift_bound)
            object.__setattr__(self, "drift_bound", bound)
            drift = np.max(np.abs(self.log_drift(_DRIFT_GRID)))
            if drift > bound * (1 + 1e-6) + 1e-9:
                raise DomainError(
                    f"slab drift {drift:.6g} exceeds the declared bound {bound:.6g}"
                )

    def log_drift(self, lam):
        """Central-difference estimate of ``lambda * d/dlambda log density``."""
        lam = np.asarray(lam, dtype=float)
        up = self.log_density(lam * math.exp(_DRIFT_STEP))
        down = self.log_density(lam * math.exp(-_DRIFT_STEP))
        return (up - down) / (2 * _DRIFT_STEP)

    @classmethod
    def power(cls, kappa, mixing_weight=0.5):
        kappa = _check_positive("kappa", kappa)
        return cls(
            density=lambda lam: np.asarray(lam, dtype=float) ** (kappa - 1.0),
            log_density=lambda lam: (kappa - 1.0) * np.log(lam),
            drift_bound=max(abs(kappa - 1.0), 1e-12),
            mixing_weight=mixing_weight,
            name=f"power({kappa:g})",
        )

    @classmethod
    def half_cauchy(cls, mixing_weight=0.5):
        return cls(
            density=lambda lam: 2.0 / (np.pi * (1.0 + np.asarray(lam, dtype=float) ** 2)),
            log_density=lambda lam: math.log(2 / math.pi) - np.log1p(np.asarray(lam) ** 2),
            drift_bound=2.0,
            mixing_weight=mixing_weight,
            name="half-cauchy",
        )

    @classmethod
    def laplace(cls, mixing_weight=0.5):
        return cls(
            density=lambda lam: np.exp(-np.asarray(lam, dtype=float)),
            log_density=lambda lam: -np.asarray(lam, dtype=float),
            drift_bound=None,
            mixing_weight=mixing_weight,
            name="laplace",
        )


Slab = Union[PowerSlab, GeneralSlab]


@dataclass(frozen=True)
class SpikeSlabPrior:
    """Spike at zero plus a slab.

    With a :class:`PowerSlab` this is the improper prior
    ``delta_0 + h * lambda**(kappa-1)`` per coordinate.  With a
    :class:`GeneralSlab` the mixture weight comes from the slab and ``scale``
    is unused.
    """

    scale: float
    slab: Slab

    def __post_init__(self):
        object.__setattr__(self, "scale", _check_positive("scale", self.scale))
        if not isinstance(self.slab, (PowerSlab, GeneralSlab)):
            raise DomainError(f"unsupported slab {self.slab!r}")

    @classmethod
    def power(cls, h, kappa):
        return cls(h, PowerSlab(kappa))

    @property
    def kappa(self) -> float:
        if not isinstance(self.slab, PowerSlab):
            raise DomainError("kappa is only defined for the power slab")
        return self.slab.kappa

    @property
    def is_power(self) -> bool:
        return isinstance(self.slab, PowerSlab)


@dataclass(frozen=True)
class SparsitySpace:
    """Exact (``eps is None``) or quasi sparse parameter space."""

    n: int
    s: float
    eps: Optional[float] = None

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise DomainError("n must be a positive integer")
        s = float(self.s)
        if not (0 < s < self.n):
            raise DomainError(f"need 0 < s < n, got s={s}, n={self.n}")
        if self.eps is not None:
            object.__setattr__(self, "eps", _check_positive("eps", self.eps))

    @property
    def kind(self) -> str:
        return "exact" if self.eps is None else "quasi"

    @property
    def eta(self) -> float:
        return self.s / self.n

    def contains(self, theta) -> bool:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n,) or np.any(theta < 0):
            return False
        thresh = 0.0 if self.eps is None else self.eps
        return int(np.count_nonzero(theta > thresh)) <= self.s


@dataclass(frozen=True)
class ConstantsReport:
    c: Optional[float] = None
    k: Optional[float] = None
    l_star: Optional[float] = None
    c_bar: Optional[float] = None
    k_bar: Optional[float] = None
    l_bar: Optional[float] = None


def _positive_array(name, r):
    arr = np.asarray(r, dtype=float)
    if arr.size == 0:
        raise DomainError(f"{name} must be non-empty")
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise DomainError(f"{name} must be positive and finite")
    return arr


def _maybe_scalar(arr):
    return float(arr) if np.ndim(arr) == 0 else arr


def constant_c(r):
    """Minimax constant ``(r/(r+1))**r / (r+1)``; vectorised over ``r``.

    Evaluated as ``exp(-r*log1p(1/r) - log1p(r))`` so that large ``r`` does
    not underflow.
    """
    r = _positive_array("r", r)
    return _maybe_scalar(np.exp(-r * np.log1p(1.0 / r) - np.log1p(r)))


def _k_terms(r, kappa):
    # r**-kappa - (r+1)**-kappa without cancellation for small kappa
    return r ** (-kappa) * -np.expm1(-kappa * np.log1p(1.0 / r)) / kappa


def constant_k(r, kappa):
    """``Gamma(kappa+1) * (r**-kappa - (r+1)**-kappa) / kappa``."""
    r = _positive_array("r", r)
    kappa = _check_positive("kappa", kappa)
    return _maybe_scalar(math.exp(gammaln(kappa + 1.0)) * _k_terms(r, kappa))


def optimal_scale(r, kappa):
    """Scale ``L*`` minimising the worst-case risk bound: ``C / K``."""
    return constant_c(r) / constant_k(r, kappa)


def constants(r, kappa) -> ConstantsReport:
    c = constant_c(r)
    k = constant_k(r, kappa)
    return ConstantsReport(c=c, k=k, l_star=c / k)


def mcar_constants(ratios, kappa) -> ConstantsReport:
    """Averaged constants for per-coordinate ratios (``C̄``, ``K̄``, ``L̄``)."""
    r = as_ratios(ratios)
    kappa = _check_positive("kappa", kappa)
    c_bar = float(np.mean(constant_c(r)))
    k_bar = float(math.exp(gammaln(kappa + 1.0)) * np.sum(_k_terms(r, kappa)) / r.size)
    return ConstantsReport(c_bar=c_bar, k_bar=k_bar, l_bar=c_bar / k_bar)


@dataclass(frozen=True)
class GammaSampling:
    """Ratios drawn from Gamma(shape=mean/l, scale=l): mean ``mean``, variance ``mean*l``."""

    mean: float
    l: float

    def __post_init__(self):
        _check_positive("mean", self.mean)
        _check_positive("l", self.l)

    def draw(self, rng, size):
        return rng.gamma(self.mean / self.l, self.l, size=size)

    def ppf(self, u):
        return stats.gamma.ppf(u, self.mean / self.l, scale=self.l)


@dataclass(frozen=True)
class BinomialSampling:
    """Ratios ``1 + Binomial(N, p)``."""

    trials: int
    p: float

    def __post_init__(self):
        if int(self.trials) != self.trials or self.trials < 0:
            raise DomainError("trials must be a non-negative integer")
        if not (0.0 <= float(self.p) <= 1.0):
            raise DomainError("p must lie in [0, 1]")

    def draw(self, rng, size):
        return 1.0 + rng.binomial(int(self.trials), float(self.p), size=size)

    def ppf(self, u):
        return 1.0 + stats.binom.ppf(u, int(self.trials), float(self.p))


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    se: float
    n: int


def expected_constant_under_g(g, n_mc: int, seed: int, chunk: int = 1_000_000,
                              antithetic: bool = True) -> MCEstimate:
    """Monte Carlo estimate of ``E_G[C(r)]`` for a ratio distribution ``G``.

    With ``antithetic`` (the default) the ``n_mc`` evaluations come in pairs
    ``(F^-1(u), F^-1(1-u))``.  ``C`` is monotone in ``r``, so each pair is
    negatively correlated and the standard error shrinks.  ``se`` is computed
    from the pair means.
    """
    if not isinstance(g, (GammaSampling, BinomialSampling)):
        raise DomainError(f"unsupported sampling distribution {g!r}")
    n_mc = int(n_mc)
    if n_mc < 1:
        raise DomainError("n_mc must be >= 1")
    rng = np.random.default_rng(seed)
    n_units = (n_mc + 1) // 2 if antithetic else n_mc
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < n_units:
        m = min(chunk, n_units - done)
        if antithetic:
            u = rng.random(m)
            c = 0.5 * (constant_c(g.ppf(u)) + constant_c(g.ppf(1.0 - u)))
        else:
            c = constant_c(g.draw(rng, m))
        c = np.atleast_1d(c)
        total += float(c.sum())
        total_sq += float(np.dot(c, c))
        done += m
    mean = total / n_units
    var = max(total_sq / n_units - mean * mean, 0.0) * n_units / max(n_units - 1, 1)
    return MCEstimate(mean=mean, se=math.sqrt(var / n_units), n=n_mc)
