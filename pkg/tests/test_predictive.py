import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate as sp_integrate
from scipy import stats

from sparse_poisson.core import (
    DomainError,
    GeneralSlab,
    IntegrabilityError,
    SpikeSlabPrior,
)
from sparse_poisson.predictive import (
    PoissonPlugin,
    SlabIntegralTable,
    fit,
    posterior_mean,
    posterior_mean_general,
    slab_integral,
    spike_weight,
    tail_robustness_diagnostic,
)

counts = st.lists(st.integers(min_value=0, max_value=60), min_size=1, max_size=12)
positive = st.floats(min_value=1e-3, max_value=50.0)


def _density(x, h=0.025, kappa=1.0, r=1.0):
    return fit(np.asarray(x), SpikeSlabPrior.power(h, kappa), r)


def test_omega_zero_for_positive_counts():
    d = _density([3, 0], h=0.3, kappa=0.5, r=2.0)
    assert d.omega[0] == 0.0
    assert 0 < d.omega[1] < 1


def test_omega_value():
    assert _density([0]).omega[0] == pytest.approx(1 / 1.025, rel=1e-14)


def test_omega_vanishes_for_huge_scale():
    assert _density([0], h=1e12).omega[0] < 1e-11


def test_fit_length_mismatch():
    with pytest.raises(DomainError):
        fit([0, 1, 2], SpikeSlabPrior.power(1.0, 1.0), [1.0, 2.0])


@given(st.floats(min_value=1e-6, max_value=1e3), st.floats(min_value=1e-6, max_value=1e3),
       st.floats(min_value=0.05, max_value=5.0), st.floats(min_value=0.1, max_value=30.0))
def test_omega_strictly_decreasing_in_h(h1, h2, kappa, r):
    if h1 == h2:
        return
    lo, hi = sorted((h1, h2))
    assert spike_weight(hi, kappa, r) < spike_weight(lo, kappa, r)


def test_pmf_zero_mixture():
    d = _density([0])
    assert d.coord_pmf(0, 0) == pytest.approx(1 / 1.025 + 0.025 / 1.025 * 0.5, rel=1e-12)
    assert d.coord_pmf(0, 0) == pytest.approx(0.98780, abs=1e-5)


def test_pmf_negative_binomial():
    d = _density([3])
    ys = np.arange(40)
    assert d.coord_pmf(0, 0) == pytest.approx(0.0625, rel=1e-13)
    assert np.allclose(d.coord_pmf(0, ys), stats.nbinom.pmf(ys, 4, 0.5), rtol=1e-12)


@given(counts, st.floats(min_value=1e-4, max_value=10.0),
       st.floats(min_value=0.05, max_value=5.0), st.floats(min_value=0.05, max_value=50.0))
def test_pmf_normalised(x, h, kappa, r):
    d = _density(x, h, kappa, r)
    mass = d._cdf_table[np.arange(d.n), d.y_max]
    assert np.all(mass >= 1 - 1e-9)


@given(counts, st.floats(min_value=1e-4, max_value=10.0),
       st.floats(min_value=0.05, max_value=5.0), st.floats(min_value=0.05, max_value=50.0))
def test_predictive_mean_equals_posterior_mean(x, h, kappa, r):
    prior = SpikeSlabPrior.power(h, kappa)
    d = fit(x, prior, r)
    assert np.allclose(d.mean(), posterior_mean(x, prior, r), rtol=1e-10, atol=0)
    ys = np.arange(int(d.y_max.max()) + 1)
    direct = np.array([np.sum(ys * d.coord_pmf(i, ys)) for i in range(d.n)])
    assert np.allclose(direct, d.mean(), rtol=1e-9, atol=1e-12)


def test_joint_log_pmf_single_and_nb():
    d = _density([0])
    assert d.joint_log_pmf([2]) == pytest.approx(math.log(d.coord_pmf(0, 2)), rel=1e-12)
    x = np.array([1, 4, 7])
    d = _density(x, h=1.0, kappa=1.0, r=1.0)
    assert d.joint_log_pmf(x) == pytest.approx(
        float(np.sum(stats.nbinom.logpmf(x, x + 1, 0.5))), rel=1e-12)


def test_joint_log_pmf_underflow_is_minus_inf():
    plug = PoissonPlugin(np.array([0.0, 2.0]))
    assert plug.joint_log_pmf([1, 2]) == -math.inf
    d = _density([0])
    val = d.joint_log_pmf([10 ** 6])
    assert not math.isnan(val)


def test_joint_log_pmf_length_mismatch():
    with pytest.raises(DomainError):
        _density([0, 1]).joint_log_pmf([0])


def test_quantiles():
    d = fit([0], SpikeSlabPrior.power(0.0201, 1.0), 1.0)
    assert d.omega[0] > 0.98 - 1e-3
    assert d.coord_quantile(0, 0.5) == 0
    nb = _density([3])
    assert nb.coord_quantile(0, 0.5) == 3
    # exact rational CDF: CDF(3) of NB(4, 1/2) is exactly 1/2
    cdf, y = Fraction(0), 0
    while True:
        cdf += Fraction(math.comb(y + 3, y), 2 ** (4 + y))
        if cdf >= Fraction(1, 2):
            break
        y += 1
    brute = y
    assert nb.median()[0] == brute
    assert nb.coord_quantile(0, 0.0) == 0
    with pytest.raises(DomainError):
        nb.coord_quantile(0, 1.0)


@given(counts, st.floats(min_value=0.0, max_value=0.999))
def test_quantile_is_smallest_with_cdf_at_least_p(x, p):
    d = _density(x, h=0.1, kappa=0.5, r=2.0)
    q = d.quantiles(p)
    cdf_q = d.cdf(q)
    assert np.all(cdf_q >= p)
    below = d.cdf(np.maximum(q - 1, 0))
    assert np.all((q == 0) | (below < p))


def test_sample_pure_spike_and_determinism():
    d = _density([0, 5], h=1e-300)
    draws = d.sample(1000, seed=3)
    assert np.all(draws[:, 0] == 0)
    assert np.array_equal(draws, d.sample(1000, seed=3))


def test_sample_mean_and_tv():
    d = _density([3])
    draws = d.sample(1_000_000, seed=11)[:, 0]
    se = draws.std() / math.sqrt(draws.size)
    assert abs(draws.mean() - 4.0) < 3 * se
    ys = np.arange(draws.max() + 1)
    emp = np.bincount(draws) / draws.size
    tv = 0.5 * np.sum(np.abs(emp - d.coord_pmf(0, ys)))
    assert tv < 0.01


@pytest.mark.parametrize("x, kappa, t, expected", [
    (0, 1.0, 1.0, 0.025 / 1.025),
    (5, 0.1, 2.0, 2.55),
])
def test_posterior_mean_values(x, kappa, t, expected):
    prior = SpikeSlabPrior.power(0.025, kappa)
    assert posterior_mean([x], prior, t_override=t)[0] == pytest.approx(expected, rel=1e-13)


def test_posterior_mean_small_scale_limit():
    assert posterior_mean([0], SpikeSlabPrior.power(1e-300, 1.0), 1.0)[0] < 1e-290


def test_posterior_mean_needs_ratio():
    with pytest.raises(DomainError):
        posterior_mean([0], SpikeSlabPrior.power(1.0, 1.0))


def test_slab_integral_values():
    assert slab_integral(GeneralSlab.power(1.0), 2, 1.0) == pytest.approx(1.0, rel=1e-10)
    hc = GeneralSlab.half_cauchy()
    ref, _ = sp_integrate.quad(lambda lam: 2 / (math.pi * (1 + lam * lam)) * math.exp(-lam),
                               0, math.inf, epsabs=0, epsrel=1e-12)
    assert slab_integral(hc, 1, 1.0) == pytest.approx(ref, rel=1e-9)
    assert slab_integral(hc, 1, 1.0) == pytest.approx(0.3956, abs=1e-4)


@given(st.floats(min_value=1.0, max_value=40.0), st.floats(min_value=0.1, max_value=5.0),
       st.floats(min_value=0.1, max_value=20.0), st.floats(min_value=0.05, max_value=3.0))
def test_slab_integral_scaling(s, kappa, t, c):
    slab = GeneralSlab.power(kappa)
    base = slab_integral(slab, s, t)
    scaled = slab_integral(slab, s, c * t)
    assert scaled == pytest.approx(base * c ** -(s + kappa - 1), rel=1e-8)


def test_slab_integral_decreasing_in_t_and_cached():
    table = SlabIntegralTable(GeneralSlab.half_cauchy())
    vals = [table.value(3, t) for t in (0.5, 1.0, 2.0, 4.0)]
    assert all(v > 0 for v in vals)
    assert all(b < a for a, b in zip(vals, vals[1:]))
    table.value(3, 0.5)
    assert len(table) == 4


def test_slab_integral_domain_and_divergence():
    with pytest.raises(DomainError):
        slab_integral(GeneralSlab.half_cauchy(), 0.5, 1.0)
    divergent = GeneralSlab(density=lambda lam: np.exp(lam), log_density=lambda lam: lam)
    with pytest.raises(IntegrabilityError):
        slab_integral(divergent, 1.0, 0.5)


@pytest.mark.parametrize("kappa, t, eta", [(1.0, 1.0, 0.3), (0.1, 1.0, 0.05), (2.5, 20.0, 0.5)])
def test_general_slab_matches_closed_form(kappa, t, eta):
    x = np.arange(51)
    general = posterior_mean_general(x, GeneralSlab.power(kappa, eta), t)
    closed = posterior_mean(x, SpikeSlabPrior.power(eta / (1 - eta), kappa), t)
    assert np.allclose(general, closed, rtol=1e-8, atol=0)


@pytest.mark.parametrize("t", [1.0, 3.0])
def test_laplace_posterior_mean(t):
    x = np.arange(1, 30)
    mean = posterior_mean_general(x, GeneralSlab.laplace(0.2), t)
    assert np.allclose(mean, (x + 1) / (t + 1), rtol=1e-9)


def test_general_small_eta_limit():
    assert posterior_mean_general([0], GeneralSlab.half_cauchy(1e-12), 1.0)[0] < 1e-10


@pytest.mark.parametrize("t", [0.5, 1.0, 20.0])
def test_drift_bound_sandwich(t):
    lam_bound = 2.0
    x = np.arange(2, 80)
    mean = posterior_mean_general(x, GeneralSlab.half_cauchy(0.1), t)
    assert np.all(mean >= (x + 1 - lam_bound) / t - 1e-12)
    assert np.all(mean <= (x + 1 + lam_bound) / t + 1e-12)


def test_tail_robustness():
    r = 1.0
    power = tail_robustness_diagnostic(
        lambda x: posterior_mean(x, SpikeSlabPrior.power(0.01, 0.1), r), r)
    assert power.verdict == "robust"
    assert power.ratios[-1] == pytest.approx(1e-4, rel=1e-9)
    lap = tail_robustness_diagnostic(
        lambda x: posterior_mean_general(x, GeneralSlab.laplace(), r), r)
    assert lap.verdict == "non-robust"
    assert lap.ratios[-1] == pytest.approx(0.5, rel=0.01)
    ident = tail_robustness_diagnostic(lambda x: x / r, r)
    assert ident.robust and np.all(ident.ratios == 0)
    with pytest.raises(DomainError):
        tail_robustness_diagnostic(lambda x: x / r, r, x_grid=np.arange(1, 50))
