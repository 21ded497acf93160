"""Seeded simulation scenarios, competing predictive densities and table summaries."""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .core import (
    DomainError,
    SpikeSlabPrior,
    as_counts,
    as_ratios,
    mcar_constants,
    optimal_scale,
)
from .prediction_sets import calibrate, calibrate_l1_ball, contains
from .predictive import PoissonPlugin, PredictiveDensity, fit
from .sparsity import estimate_by_method

__all__ = [
    "ScenarioSpec",
    "Trial",
    "generate_trial",
    "resolve_scale",
    "method_proposed",
    "method_l1_plugin",
    "method_gamma_baseline",
    "MethodSpec",
    "TrialMetrics",
    "compute_metrics",
    "SummaryRow",
    "TableResult",
    "run_table",
    "load_external_metrics",
    "worker_count",
]

METRICS = ("l1", "weighted_l1", "pll", "coverage")
SET_KINDS = ("l1-ball", "equal-tail")


@dataclass(frozen=True)
class ScenarioSpec:
    """One simulation design.

    ``ratio`` is used unless ``mcar`` is set to ``(m, p)``, in which case
    ``r_i = 1 + Binomial(m, p)`` independently per coordinate and trial.
    ``quasi_upper`` switches on quasi-sparsity: off-support means are drawn
    from ``Uniform[0, quasi_upper]``.
    """

    n: int = 200
    s: int = 5
    ratio: float = 1.0
    mcar: Optional[tuple] = None
    quasi_upper: Optional[float] = None
    spike_shape: float = 10.0
    spike_scale: float = 1.0
    trials: int = 500
    seed: int = 0

    def __post_init__(self):
        if not (1 <= self.s < self.n):
            raise DomainError(f"need 1 <= s < n, got s={self.s}, n={self.n}")
        if self.trials < 1:
            raise DomainError("trials must be >= 1")
        if not (self.ratio > 0 and math.isfinite(self.ratio)):
            raise DomainError("ratio must be positive")
        if self.mcar is not None:
            m, p = self.mcar
            if int(m) != m or m < 0 or not (0 <= p <= 1):
                raise DomainError(f"invalid MCAR parameters {self.mcar!r}")
            object.__setattr__(self, "mcar", (int(m), float(p)))
        if self.quasi_upper is not None and not self.quasi_upper > 0:
            raise DomainError("quasi_upper must be positive")
        if self.spike_shape <= 0 or self.spike_scale <= 0:
            raise DomainError("spike law parameters must be positive")

    @property
    def sparsity_kind(self) -> str:
        return "exact" if self.quasi_upper is None else "quasi"

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        d = dict(d)
        if d.get("mcar") is not None:
            mc = d["mcar"]
            d["mcar"] = (mc["m"], mc["p"]) if isinstance(mc, dict) else tuple(mc)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise DomainError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.mcar is not None:
            d["mcar"] = {"m": self.mcar[0], "p": self.mcar[1]}
        return d


@dataclass(frozen=True)
class Trial:
    theta: np.ndarray
    x: np.ndarray
    y: np.ndarray
    ratios: np.ndarray


def _random_subset(rng, n, s):
    # partial Fisher-Yates: the first s slots are a uniform s-subset
    perm = np.arange(n)
    for i in range(s):
        j = int(rng.integers(i, n))
        perm[i], perm[j] = perm[j], perm[i]
    return perm[:s]


def generate_trial(spec: ScenarioSpec, trial_index: int) -> Trial:
    """Draw ``(theta, x, y, r)``; deterministic in ``(spec.seed, trial_index)``."""
    rng = np.random.default_rng([spec.seed, trial_index])
    support = _random_subset(rng, spec.n, spec.s)
    theta = np.zeros(spec.n)
    if spec.quasi_upper is not None:
        theta[:] = rng.uniform(0.0, spec.quasi_upper, size=spec.n)
    theta[support] = rng.gamma(spec.spike_shape, spec.spike_scale, size=spec.s)
    if spec.mcar is None:
        ratios = np.full(spec.n, float(spec.ratio))
    else:
        ratios = 1.0 + rng.binomial(spec.mcar[0], spec.mcar[1], size=spec.n)
    x = rng.poisson(ratios * theta)
    y = rng.poisson(theta)
    return Trial(theta=theta, x=x, y=y, ratios=ratios)


def resolve_scale(rule: str, ratios, kappa: float, eta_hat: float) -> float:
    """Prior scale ``h`` for ``auto-lstar | auto-lbar | fixed:<h> | scale:<L>``."""
    r = np.atleast_1d(as_ratios(ratios))
    if rule == "auto-lstar":
        if not np.all(r == r[0]):
            raise DomainError("auto-lstar needs a common ratio; use auto-lbar for MCAR data")
        return float(optimal_scale(float(r[0]), kappa)) * eta_hat
    if rule == "auto-lbar":
        return mcar_constants(r, kappa).l_bar * eta_hat
    kind, _, value = rule.partition(":")
    try:
        value = float(value)
    except ValueError:
        raise DomainError(f"bad scale rule {rule!r}") from None
    if not (value > 0 and math.isfinite(value)):
        raise DomainError(f"scale value must be positive, got {rule!r}")
    if kind == "fixed":
        return value
    if kind == "scale":
        return value * eta_hat
    raise DomainError(f"unknown scale rule {rule!r}")


def method_proposed(x, ratios, kappa: float, scale_rule: str = "auto-lstar",
                    sparsity_method: str = "count", periods=None) -> PredictiveDensity:
    """Predictive density under ``Pi[L * eta_hat, kappa]``."""
    x = as_counts(x)
    est = estimate_by_method(x, sparsity_method, periods)
    h = resolve_scale(scale_rule, as_ratios(ratios, x.size), kappa, est.eta_hat)
    return fit(x, SpikeSlabPrior.power(h, kappa), ratios)


def method_l1_plugin(x, ratios, lambda_reg: float = 0.1) -> PoissonPlugin:
    """Plug-in ``Po(x / (r (1 + lambda)))``, the maximiser of ``x log t - r t - r lambda t``."""
    if not lambda_reg > 0:
        raise DomainError("lambda_reg must be positive")
    x = as_counts(x)
    r = as_ratios(ratios, x.size)
    return PoissonPlugin(theta_hat=x / (r * (1.0 + lambda_reg)), ratios=r)


def method_gamma_baseline(x, ratios, kappa: float) -> PredictiveDensity:
    """Slab-only control: negative binomial per coordinate with no spike mass."""
    x = as_counts(x)
    r = np.array(as_ratios(ratios, x.size), dtype=float)
    if not kappa > 0:
        raise DomainError("kappa must be positive")
    return PredictiveDensity(
        x=x, ratios=r, kappa=float(kappa), scale=math.inf,
        log_omega=np.full(x.size, -np.inf), log1m_omega=np.zeros(x.size),
    )


@dataclass(frozen=True)
class MethodSpec:
    """A competing method: ``proposed``, ``l1`` or ``gamma``."""

    kind: str
    name: Optional[str] = None
    kappa: float = 0.1
    scale: str = "auto-lstar"
    sparsity: str = "count"
    lambda_reg: float = 0.1

    def __post_init__(self):
        if self.kind not in ("proposed", "l1", "gamma"):
            raise DomainError(f"unknown method kind {self.kind!r}")
        if self.name is None:
            default = {
                "proposed": f"proposed(kappa={self.kappa:g})",
                "l1": f"l1(lambda={self.lambda_reg:g})",
                "gamma": f"gamma(kappa={self.kappa:g})",
            }[self.kind]
            object.__setattr__(self, "name", default)

    @classmethod
    def from_dict(cls, d: dict) -> "MethodSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise DomainError(f"unknown method keys: {sorted(unknown)}")
        return cls(**d)

    def build(self, x, ratios):
        if self.kind == "proposed":
            return method_proposed(x, ratios, self.kappa, self.scale, self.sparsity)
        if self.kind == "l1":
            return method_l1_plugin(x, ratios, self.lambda_reg)
        return method_gamma_baseline(x, ratios, self.kappa)


@dataclass(frozen=True)
class TrialMetrics:
    l1: float
    weighted_l1: float
    pll: float
    covered: bool


def compute_metrics(density, y, ratios, alpha: float = 0.9, m_cal: int = 20_000,
                    seed=0, set_kind: str = "l1-ball") -> TrialMetrics:
    """l1 and r-weighted l1 distance of the predictive mean, log-likelihood, coverage.

    ``set_kind`` selects the joint prediction set: a weighted l1 ball about
    the predictive mean or a product of equal-tail intervals.
    """
    y = as_counts(y)
    r = as_ratios(ratios, y.size)
    diff = np.abs(density.mean() - y)
    l1 = float(math.fsum(diff))
    weighted = float(math.fsum(r * diff) / (math.fsum(r) / y.size))
    pll = density.joint_log_pmf(y)
    if set_kind == "l1-ball":
        pred_set = calibrate_l1_ball(density, alpha, m_cal, seed, ratios=r)
    elif set_kind == "equal-tail":
        pred_set = calibrate(density, alpha, m_cal, seed)
    else:
        raise DomainError(f"unknown set kind {set_kind!r}; expected one of {SET_KINDS}")
    return TrialMetrics(l1=l1, weighted_l1=weighted, pll=pll, covered=contains(pred_set, y))


@dataclass(frozen=True)
class SummaryRow:
    method: str
    metric: str
    mean: float
    sd: Optional[float]


@dataclass
class TableResult:
    spec: ScenarioSpec
    alpha: float
    rows: List[SummaryRow]
    set_kind: str = "l1-ball"
    per_trial: dict = field(repr=False, default_factory=dict)

    def row(self, method: str, metric: str) -> SummaryRow:
        for row in self.rows:
            if row.method == method and row.metric == metric:
                return row
        raise KeyError((method, metric))

    def to_csv(self, header_lines: Sequence[str] = ()) -> str:
        """Summary rows as CSV text; an undefined SD is left empty."""
        buf = io.StringIO()
        for line in header_lines:
            buf.write(f"# {line}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["method", "metric", "mean", "sd"])
        for row in self.rows:
            writer.writerow([row.method, row.metric, _fmt(row.mean),
                             "" if row.sd is None else _fmt(row.sd)])
        return buf.getvalue()

    def write_csv(self, path, header_lines: Sequence[str] = ()):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(self.to_csv(header_lines))


def _fmt(v: float) -> str:
    if math.isinf(v):
        return "-Inf" if v < 0 else "Inf"
    return f"{v:.6g}"


def _trial_seed(seed, trial, method_index):
    return np.random.SeedSequence([seed, trial, 1 + method_index])


def _run_trials(spec, methods, alpha, m_cal, set_kind, indices):
    out = []
    for t in indices:
        trial = generate_trial(spec, t)
        per_method = []
        for k, method in enumerate(methods):
            density = method.build(trial.x, trial.ratios)
            per_method.append(compute_metrics(density, trial.y, trial.ratios, alpha, m_cal,
                                              _trial_seed(spec.seed, t, k), set_kind))
        out.append(per_method)
    return out


def worker_count(requested: Optional[int] = None) -> int:
    """Parallelism: explicit request, else ``SPARSE_POISSON_THREADS``, else CPU count."""
    cap = os.environ.get("SPARSE_POISSON_THREADS")
    n = requested or (int(cap) if cap else os.cpu_count() or 1)
    if cap:
        n = min(n, int(cap))
    return max(1, n)


def _summarise(name, metrics: Sequence[TrialMetrics]) -> List[SummaryRow]:
    rows = []
    columns = {
        "l1": np.array([m.l1 for m in metrics]),
        "weighted_l1": np.array([m.weighted_l1 for m in metrics]),
        "pll": np.array([m.pll for m in metrics]),
        "coverage": 100.0 * np.array([m.covered for m in metrics], dtype=float),
    }
    for metric in METRICS:
        values = columns[metric]
        if np.any(np.isneginf(values)):
            rows.append(SummaryRow(name, metric, -math.inf, None))
            continue
        sd = float(np.std(values, ddof=1)) if values.size > 1 else None
        rows.append(SummaryRow(name, metric, float(np.mean(values)), sd))
    return rows


def run_table(spec: ScenarioSpec, methods: Sequence[MethodSpec], alpha: float = 0.9,
              m_cal: int = 20_000, workers: Optional[int] = None,
              external: Sequence[tuple] = (), set_kind: str = "l1-ball") -> TableResult:
    """Run every method on ``spec.trials`` seeded trials and summarise each metric.

    Coverage uses ``set_kind`` sets (see :func:`compute_metrics`).  A
    method's PLL mean is ``-inf`` (written ``-Inf``) when any trial is
    ``-inf``.  Results do not depend on ``workers``.  ``external`` holds
    ``(name, path)`` pairs of per-trial metric CSVs reported alongside.
    """
    if not (0 < alpha < 1):
        raise DomainError("alpha must lie in (0, 1)")
    if set_kind not in SET_KINDS:
        raise DomainError(f"unknown set kind {set_kind!r}; expected one of {SET_KINDS}")
    methods = list(methods)
    names = [m.name for m in methods]
    if len(set(names)) != len(names):
        raise DomainError("method names must be unique")
    indices = list(range(spec.trials))
    n_workers = min(worker_count(workers), len(indices))
    if n_workers <= 1:
        results = _run_trials(spec, methods, alpha, m_cal, set_kind, indices)
    else:
        chunks = [indices[i::n_workers] for i in range(n_workers)]
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            futures = [pool.submit(_run_trials, spec, methods, alpha, m_cal, set_kind, c)
                       for c in chunks]
            parts = [f.result() for f in futures]
        results = [None] * len(indices)
        for chunk, part in zip(chunks, parts):
            for t, res in zip(chunk, part):
                results[t] = res
    per_trial = {name: [res[k] for res in results] for k, name in enumerate(names)}
    rows = []
    for name in names:
        rows.extend(_summarise(name, per_trial[name]))
    for name, path in external:
        metrics = load_external_metrics(path)
        per_trial[name] = metrics
        rows.extend(_summarise(name, metrics))
    return TableResult(spec=spec, alpha=alpha, rows=rows, set_kind=set_kind, per_trial=per_trial)


def _parse_float(text: str) -> float:
    t = text.strip()
    if t in ("-Inf", "-inf"):
        return -math.inf
    return float(t)


def load_external_metrics(path) -> List[TrialMetrics]:
    """Read per-trial metrics computed elsewhere (columns l1, weighted_l1, pll, covered)."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        for row in reader:
            l1 = _parse_float(row["l1"])
            out.append(TrialMetrics(
                l1=l1,
                weighted_l1=_parse_float(row.get("weighted_l1") or row["l1"]),
                pll=_parse_float(row["pll"]),
                covered=row["covered"].strip().lower() in ("1", "true", "yes"),
            ))
    if not out:
        raise DomainError(f"no trials in {path}")
    return out
