"""Per-coordinate spike-and-slab posteriors and subset-selection l-values
against quadrature and enumeration oracles."""

import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.special import gammaln, logsumexp
from scipy.stats import norm

from sparsebayes.distributions import ConvolvedMarginal, SlabSpec, oracle_threshold, phi
from sparsebayes.sas_posterior import (
    CoordinatePosterior,
    SasPrior,
    SlabComponent,
    SubsetSelectionPrior,
    coordinate_moments,
    l_value,
    median_threshold,
    posterior_median,
    posterior_weight,
    sample_coordinate,
    subset_selection_l_values,
)

LAPLACE1 = SlabSpec.laplace(1.0)
CAUCHY1 = SlabSpec.cauchy(1.0)


def quad_g(x, slab):
    val, _ = integrate.quad(
        lambda u: phi(x - u) * slab.density(u), -42, 42, points=[0.0, max(-41, min(41, x))],
        epsabs=1e-13, epsrel=1e-12, limit=400,
    )
    return val


def quad_weight(x, prior):
    """Two-point-mixture Bayes weight computed from the quadrature marginal."""
    a = prior.alpha
    g = quad_g(x, prior.slab)
    return a * g / ((1 - a) * float(phi(x)) + a * g)


def quad_slab_moment(x, slab, power, about=0.0):
    g = quad_g(x, slab)
    val, _ = integrate.quad(
        lambda u: (u - about) ** power * phi(x - u) * slab.density(u),
        x - 42, x + 42, points=[p for p in (0.0, x) if x - 42 < p < x + 42],
        epsabs=1e-13, epsrel=1e-11, limit=400,
    )
    return val / g


class TestPosteriorWeight:
    def test_degenerate_weights(self):
        for x in (-3.0, 0.0, 7.5):
            assert posterior_weight(x, SasPrior(0.0, LAPLACE1)) == 0.0
            assert posterior_weight(x, SasPrior(1.0, LAPLACE1)) == 1.0

    def test_against_quadrature_oracle_at_zero(self):
        prior = SasPrior(0.1, LAPLACE1)
        assert posterior_weight(0.0, prior) == pytest.approx(quad_weight(0.0, prior), abs=1e-10)

    @pytest.mark.parametrize("slab", [LAPLACE1, CAUCHY1])
    def test_against_quadrature_oracle_grid(self, slab):
        prior = SasPrior(0.2, slab)
        for x in (-6.0, -1.0, 0.5, 3.0, 8.0):
            assert posterior_weight(x, prior) == pytest.approx(quad_weight(x, prior), abs=1e-8)

    @pytest.mark.parametrize("slab", [LAPLACE1, CAUCHY1])
    def test_symmetry_exact(self, slab):
        prior = SasPrior(0.37, slab)
        x = np.linspace(0.0, 14.0, 57)
        np.testing.assert_array_equal(posterior_weight(x, prior), posterior_weight(-x, prior))

    @pytest.mark.parametrize("slab", [LAPLACE1, CAUCHY1])
    def test_monotone_in_abs_x(self, slab):
        prior = SasPrior(0.05, slab)
        x = np.linspace(0.0, 15.0, 400)
        a = posterior_weight(x, prior)
        assert np.all(np.diff(a) > -1e-12)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            posterior_weight(np.inf, SasPrior(0.1, LAPLACE1))


class TestLValue:
    def test_all_spike(self):
        assert l_value(4.0, SasPrior(0.0, LAPLACE1)) == 1.0

    def test_complementarity_exact(self):
        rng = np.random.default_rng(0)
        prior = SasPrior(0.23, LAPLACE1)
        for x in rng.uniform(-10, 10, 50):
            assert l_value(x, prior) + posterior_weight(x, prior) == 1.0

    def test_large_observation_vs_quadrature(self):
        prior = SasPrior(0.1, LAPLACE1)
        assert l_value(6.0, prior) == pytest.approx(1.0 - quad_weight(6.0, prior), abs=1e-8)


class TestCoordinateMoments:
    def test_spike_only(self):
        mean, second = coordinate_moments(2.0, SasPrior(0.0, LAPLACE1), about=3.0)
        assert mean == 0.0
        assert second == pytest.approx(9.0, abs=1e-14)

    @pytest.mark.parametrize("slab", [LAPLACE1, CAUCHY1])
    def test_mean_zero_at_origin(self, slab):
        mean, _ = coordinate_moments(0.0, SasPrior(0.3, slab))
        assert mean == pytest.approx(0.0, abs=1e-12)

    def test_laplace_against_quadrature(self):
        prior = SasPrior(0.1, LAPLACE1)
        for x, about in ((4.0, 4.0), (-2.0, 0.0), (0.7, -1.0), (9.0, 9.0)):
            a = quad_weight(x, prior)
            m1 = quad_slab_moment(x, LAPLACE1, 1)
            m2a = quad_slab_moment(x, LAPLACE1, 2, about=about)
            mean, second = coordinate_moments(x, prior, about=about)
            assert mean == pytest.approx(a * m1, abs=1e-6)
            assert second == pytest.approx((1 - a) * about**2 + a * m2a, abs=1e-6)

    def test_cauchy_against_quadrature(self):
        prior = SasPrior(0.15, CAUCHY1)
        for x, about in ((3.0, 3.0), (-1.5, 1.0)):
            a = quad_weight(x, prior)
            m1 = quad_slab_moment(x, CAUCHY1, 1)
            m2a = quad_slab_moment(x, CAUCHY1, 2, about=about)
            mean, second = coordinate_moments(x, prior, about=about)
            assert mean == pytest.approx(a * m1, abs=1e-6)
            assert second == pytest.approx((1 - a) * about**2 + a * m2a, abs=1e-6)

    def test_vectorized_matches_scalar(self):
        prior = SasPrior(0.2, LAPLACE1)
        xs = np.array([-5.0, -0.3, 2.2, 11.0])
        means, seconds = coordinate_moments(xs, prior, about=1.5)
        for i, x in enumerate(xs):
            m, s = coordinate_moments(float(x), prior, about=1.5)
            assert means[i] == pytest.approx(m, rel=1e-12)
            assert seconds[i] == pytest.approx(s, rel=1e-12)

    def test_integrated_risk_stays_of_sparse_order(self):
        # s signals at twice the detection threshold; the summed posterior
        # second moments about the truth stay within a loose constant times
        # s log(n/s)
        n, s = 2000, 20
        prior = SasPrior(s / n, LAPLACE1)
        a_star = oracle_threshold(n, s)
        rng = np.random.default_rng(99)
        budget = s * math.log(n / s)
        risks = []
        for _ in range(100):
            theta = np.zeros(n)
            idx = rng.choice(n, s, replace=False)
            theta[idx] = 2.0 * a_star * rng.choice([-1.0, 1.0], s)
            x = theta + rng.standard_normal(n)
            _, second = coordinate_moments(x, prior, about=theta)
            risks.append(np.sum(second))
        assert np.mean(risks) <= 8.0 * budget


class TestSlabComponent:
    @pytest.mark.parametrize("slab", [LAPLACE1, CAUCHY1])
    def test_density_normalized(self, slab):
        for x in (-4.0, 0.0, 2.5):
            comp = SlabComponent(x, slab)
            total, _ = integrate.quad(comp.density, x - 42, x + 42,
                                      points=[p for p in (0.0, x) if x - 42 < p < x + 42],
                                      epsabs=1e-10, epsrel=1e-8, limit=300)
            assert total == pytest.approx(1.0, abs=1e-6)

    @pytest.mark.parametrize("slab", [LAPLACE1, CAUCHY1])
    def test_cdf_matches_density_quadrature(self, slab):
        comp = SlabComponent(1.7, slab)
        for t in (-2.0, 0.0, 1.0, 3.0):
            val, _ = integrate.quad(comp.density, 1.7 - 42, t,
                                    points=[p for p in (0.0, 1.7) if 1.7 - 42 < p < t],
                                    epsabs=1e-11, epsrel=1e-9, limit=300)
            assert comp.cdf(t) == pytest.approx(val, abs=1e-7)

    def test_coordinate_posterior_constructor(self):
        prior = SasPrior(0.2, LAPLACE1)
        cp = CoordinatePosterior.from_prior(3.0, prior)
        assert cp.a == pytest.approx(posterior_weight(3.0, prior))
        assert cp.slab_component.x == 3.0


class TestPosteriorMedian:
    def test_zero_at_origin_for_small_alpha(self):
        assert posterior_median(0.0, SasPrior(0.01, LAPLACE1)) == 0.0

    def test_large_x_against_quadrature_median(self):
        prior = SasPrior(0.1, LAPLACE1)
        x = 10.0
        med = posterior_median(x, prior)
        assert med > 0.0
        a = quad_weight(x, prior)
        comp = SlabComponent(x, LAPLACE1)

        def mixture_cdf(t):
            val, _ = integrate.quad(comp.density, x - 42, t, points=[0.0],
                                    epsabs=1e-12, epsrel=1e-10, limit=300)
            return (1 - a) * (t >= 0.0) + a * val

        from scipy.optimize import brentq

        oracle = brentq(lambda t: mixture_cdf(t) - 0.5, 0.0, x + 40, xtol=1e-9)
        assert med == pytest.approx(oracle, abs=1e-4)

    def test_median_zero_region_is_threshold(self):
        prior = SasPrior(0.05, LAPLACE1)
        t = median_threshold(prior)
        assert posterior_median(t * 0.98, prior) == 0.0
        assert posterior_median(t * 1.02, prior) > 0.0

    def test_threshold_scales_like_sqrt_two_log(self):
        for alpha in (1e-3, 1e-4, 1e-5):
            t = median_threshold(SasPrior(alpha, LAPLACE1))
            ratio = t / math.sqrt(2.0 * math.log(1.0 / alpha))
            assert 0.7 <= ratio <= 1.4

    def test_degenerate_alpha_rejected(self):
        for alpha in (0.0, 1.0):
            with pytest.raises(ValueError):
                posterior_median(1.0, SasPrior(alpha, LAPLACE1))
            with pytest.raises(ValueError):
                median_threshold(SasPrior(alpha, LAPLACE1))


class TestSampleCoordinate:
    def test_spike_only_prior(self):
        rng = np.random.default_rng(0)
        draws = sample_coordinate(3.0, SasPrior(0.0, LAPLACE1), rng, size=100)
        assert np.all(draws == 0.0)

    def test_spike_frequency_and_mean(self):
        prior = SasPrior(0.3, LAPLACE1)
        x = 3.0
        rng = np.random.default_rng(123)
        draws = sample_coordinate(x, prior, rng, size=100_000)
        a = quad_weight(x, prior)
        spike_freq = np.mean(draws == 0.0)
        se_spike = math.sqrt(a * (1 - a) / draws.size)
        assert abs(spike_freq - (1 - a)) <= 3 * se_spike
        mean_target, second = coordinate_moments(x, prior)
        sd = math.sqrt(second - mean_target**2)
        assert abs(draws.mean() - mean_target) <= 4 * sd / math.sqrt(draws.size)

    def test_cauchy_slab_rejection_sampler(self):
        prior = SasPrior(0.5, CAUCHY1)
        x = 4.0
        rng = np.random.default_rng(5)
        draws = sample_coordinate(x, prior, rng, size=40_000)
        slab_draws = draws[draws != 0.0]
        m1 = quad_slab_moment(x, CAUCHY1, 1)
        m2 = quad_slab_moment(x, CAUCHY1, 2)
        se = math.sqrt((m2 - m1 * m1) / slab_draws.size)
        assert abs(slab_draws.mean() - m1) <= 4 * se

    def test_scalar_draw(self):
        rng = np.random.default_rng(1)
        val = sample_coordinate(2.0, SasPrior(0.9, LAPLACE1), rng)
        assert isinstance(val, float)


def brute_force_l_values(x, dim_log_weights, slab):
    """Enumerate all 2^n supports and accumulate P(i not in S | X)."""
    n = len(x)
    log_r = ConvolvedMarginal(slab).log_ratio(np.asarray(x, dtype=float))
    num = np.full(n, -np.inf)
    den = -np.inf
    for k in range(n + 1):
        if dim_log_weights[k] == -np.inf:
            continue
        log_tilde = dim_log_weights[k] - (gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1))
        for S in combinations(range(n), k):
            t = log_tilde + sum(log_r[list(S)])
            den = np.logaddexp(den, t)
            in_s = set(S)
            for i in range(n):
                if i not in in_s:
                    num[i] = np.logaddexp(num[i], t)
    return np.exp(num - den)


class TestSubsetSelectionLValues:
    def test_single_coordinate_two_model_bayes(self):
        slab = LAPLACE1
        x = np.array([1.3])
        prior = SubsetSelectionPrior(np.log([0.5, 0.5]), slab)
        lv = subset_selection_l_values(x, prior, k_max=1)
        g = quad_g(1.3, slab)
        expected = float(phi(1.3)) / (float(phi(1.3)) + g)
        assert lv[0] == pytest.approx(expected, abs=1e-10)

    def test_three_point_example_vs_enumeration(self):
        x = np.array([0.1, 2.0, 5.0])
        lw = -np.arange(4.0)
        prior = SubsetSelectionPrior(lw, LAPLACE1)
        lv = subset_selection_l_values(x, prior, k_max=3)
        brute = brute_force_l_values(x, lw, LAPLACE1)
        np.testing.assert_allclose(np.log(lv), np.log(brute), atol=1e-10)

    def test_binomial_weights_factorize_to_product_posterior(self):
        n, alpha = 40, 0.15
        k = np.arange(n + 1)
        log_binom = gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)
        lw = log_binom + k * math.log(alpha) + (n - k) * math.log1p(-alpha)
        prior = SubsetSelectionPrior(lw, LAPLACE1)
        rng = np.random.default_rng(8)
        x = rng.standard_normal(n)
        x[:4] += 4.0
        lv = subset_selection_l_values(x, prior, k_max=n)
        product = l_value(x, SasPrior(alpha, LAPLACE1))
        np.testing.assert_allclose(lv, product, atol=1e-10)

    @settings(max_examples=25, deadline=None)
    @given(
        n=st.integers(min_value=1, max_value=9),
        seed=st.integers(min_value=0, max_value=10_000),
        decay=st.floats(min_value=0.2, max_value=3.0),
    )
    def test_matches_enumeration_on_random_instances(self, n, seed, decay):
        rng = np.random.default_rng(seed)
        x = rng.uniform(-6, 6, n)
        lw = -decay * np.arange(n + 1.0)
        prior = SubsetSelectionPrior(lw, LAPLACE1)
        lv = subset_selection_l_values(x, prior, k_max=n)
        brute = brute_force_l_values(x, lw, LAPLACE1)
        np.testing.assert_allclose(lv, brute, atol=1e-8)

    def test_extreme_ratio_triggers_stable_fallback(self):
        # one enormous observation makes the deflation cancel catastrophically
        x = np.array([38.0, 0.2, -0.5, 1.0])
        lw = np.log(np.ones(5) / 5)
        prior = SubsetSelectionPrior(lw, LAPLACE1)
        lv = subset_selection_l_values(x, prior, k_max=4)
        brute = brute_force_l_values(x, lw, LAPLACE1)
        np.testing.assert_allclose(lv, brute, atol=1e-8)
        assert lv[0] < 1e-12

    def test_k_max_truncation_matches_when_tail_is_dead(self):
        rng = np.random.default_rng(3)
        n = 30
        x = rng.standard_normal(n)
        lw = -5.0 * np.arange(n + 1.0)
        prior = SubsetSelectionPrior(lw, LAPLACE1)
        full = subset_selection_l_values(x, prior, k_max=n)
        trunc = subset_selection_l_values(x, prior, k_max=8)
        np.testing.assert_allclose(full, trunc, atol=1e-10)

    def test_default_k_max_from_prior_dimension(self):
        lw = -np.arange(101.0)
        prior = SubsetSelectionPrior(lw, LAPLACE1)
        assert prior.default_k_max() <= 100
        assert prior.default_k_max() >= 50

    def test_errors(self):
        prior = SubsetSelectionPrior(np.zeros(4), LAPLACE1)
        with pytest.raises(ValueError):
            subset_selection_l_values(np.zeros(3), prior, k_max=0)
        with pytest.raises(ValueError):
            subset_selection_l_values(np.zeros(5), prior)
        with pytest.raises(ValueError):
            SubsetSelectionPrior(np.full(4, -np.inf), LAPLACE1)
