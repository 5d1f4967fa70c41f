"""Mean-field variational Bayes for sparse regression: CAVI behavior, the
ELBO contract, and the exact enumeration oracle."""

import math

import numpy as np
import pytest
from scipy import integrate
from scipy.stats import norm

from sparsebayes._rng import replicate_rng
from sparsebayes.distributions import SlabSpec
from sparsebayes.empirical_bayes import beta_binomial_dim_prior
from sparsebayes.vb_regression import (
    MeanFieldState,
    RegressionInstance,
    RegressionPrior,
    cavi_fit,
    default_init,
    elbo,
    enumeration_oracle,
    generate_design,
    kl_upper_bound,
    sandwich_condition_holds,
    simulate_instance,
)


def bb_prior(p, u=2.0, lam=1.0):
    return RegressionPrior(beta_binomial_dim_prior(p, 1.0, float(p) ** u), lam)


def small_instance(n, p, support_values, seed):
    design = generate_design(n, p, seed=seed)
    theta0 = np.zeros(p)
    theta0[: len(support_values)] = support_values
    rng = replicate_rng(seed, 1)
    return simulate_instance(design, theta0, rng), theta0


class TestGenerateDesign:
    def test_reproducible(self):
        np.testing.assert_array_equal(generate_design(20, 7, seed=3), generate_design(20, 7, seed=3))
        assert not np.array_equal(generate_design(20, 7, seed=3), generate_design(20, 7, seed=4))

    def test_entry_mean_clt(self):
        X = generate_design(300, 40, seed=0)
        assert abs(X.mean()) <= 4.0 / math.sqrt(X.size)

    def test_column_norms_concentrate(self):
        n = 1000
        worst = 0.0
        for seed in range(20):
            X = generate_design(n, 10, seed=seed)
            worst = max(worst, float(np.max(np.abs((X**2).sum(axis=0) / n - 1.0))))
        assert worst <= 5.0 / math.sqrt(n)


class TestElbo:
    def test_point_mass_at_zero_state(self):
        inst, _ = small_instance(25, 4, [], seed=2)
        prior = bb_prior(4)
        state = MeanFieldState(np.zeros(4), np.zeros(4), np.ones(4), np.array([]))
        val = elbo(state, inst, prior)
        loglik0 = -12.5 * math.log(2 * math.pi) - 0.5 * float(inst.response @ inst.response)
        expected = loglik0 + float(prior.support_log_weights()[0])
        assert val == pytest.approx(expected, rel=1e-12)

    def test_never_exceeds_log_marginal(self):
        for seed in range(3):
            inst, _ = small_instance(30, 6, [3.0, -2.0], seed=seed)
            prior = bb_prior(6)
            state = cavi_fit(inst, prior)
            oracle = enumeration_oracle(inst, prior, 20_000, seed=seed)
            assert state.elbo_trace[-1] <= oracle.log_marginal + 4 * oracle.log_marginal_se

    def test_permutation_invariance(self):
        inst, _ = small_instance(30, 5, [2.0], seed=7)
        prior = bb_prior(5)
        state = cavi_fit(inst, prior)
        perm = np.array([3, 0, 4, 1, 2])
        inst_p = RegressionInstance(inst.design[:, perm], inst.response)
        state_p = MeanFieldState(state.gamma[perm], state.mu[perm], state.sd[perm], np.array([]))
        assert elbo(state_p, inst_p, prior) == pytest.approx(
            elbo(state, inst, prior), rel=1e-10
        )

    def test_rejects_degenerate_sd(self):
        inst, _ = small_instance(10, 3, [], seed=1)
        with pytest.raises(ValueError):
            MeanFieldState(np.full(3, 0.5), np.zeros(3), np.zeros(3), np.array([]))


class TestCaviFit:
    def test_single_strong_coefficient(self):
        inst, _ = small_instance(50, 1, [10.0], seed=11)
        prior = bb_prior(1, u=2.0)
        state = cavi_fit(inst, prior)
        lsq = float(inst.design[:, 0] @ inst.response / (inst.design[:, 0] @ inst.design[:, 0]))
        assert state.gamma[0] >= 0.99
        assert abs(state.mu[0] - lsq) <= 0.2

    def test_elbo_trace_monotone(self):
        for seed in range(5):
            inst, _ = small_instance(40, 12, [4.0, -4.0, 3.0], seed=seed)
            state = cavi_fit(inst, bb_prior(12))
            assert np.all(np.diff(state.elbo_trace) >= -1e-9)

    def test_null_model_stays_sparse(self):
        hits = 0
        seeds = 20
        for seed in range(seeds):
            inst, _ = small_instance(100, 200, [], seed=seed)
            state = cavi_fit(inst, bb_prior(200, u=2.0))
            hits += float(np.sum(state.gamma)) <= 2.0
        assert hits >= 0.9 * seeds

    def test_restart_is_fixed_point(self):
        inst, _ = small_instance(60, 8, [5.0, -3.0], seed=21)
        prior = bb_prior(8)
        state = cavi_fit(inst, prior, tol=1e-9)
        again = cavi_fit(inst, prior, init=state, tol=1e-9)
        assert len(again.elbo_trace) - 1 <= 1
        assert again.elbo_trace[-1] - state.elbo_trace[-1] < 1e-8

    def test_permutation_equivariance(self):
        inst, _ = small_instance(45, 6, [4.0, 2.5], seed=33)
        prior = bb_prior(6)
        state = cavi_fit(inst, prior)
        perm = np.array([5, 3, 0, 1, 4, 2])
        inst_p = RegressionInstance(inst.design[:, perm], inst.response)
        state_p = cavi_fit(inst_p, prior)
        np.testing.assert_allclose(state_p.gamma, state.gamma[perm], atol=1e-6)
        np.testing.assert_allclose(state_p.gamma * state_p.mu, (state.gamma * state.mu)[perm], atol=1e-6)

    def test_posterior_mean_property(self):
        state = MeanFieldState(np.array([0.5]), np.array([2.0]), np.array([1.0]), np.array([]))
        assert state.posterior_mean[0] == 1.0

    def test_validation(self):
        inst, _ = small_instance(10, 3, [], seed=0)
        with pytest.raises(ValueError):
            cavi_fit(inst, bb_prior(3), max_sweeps=0)
        with pytest.raises(ValueError):
            cavi_fit(inst, bb_prior(4))


class TestEnumerationOracle:
    def test_forced_empty_support(self):
        inst, _ = small_instance(20, 4, [2.0], seed=5)
        weights = np.full(5, -np.inf)
        weights[0] = 0.0
        prior = RegressionPrior(weights, 1.0)
        res = enumeration_oracle(inst, prior, 10_000, seed=1)
        np.testing.assert_array_equal(res.inclusion_probs, np.zeros(4))
        np.testing.assert_array_equal(res.posterior_mean, np.zeros(4))
        expected = -10.0 * math.log(2 * math.pi) - 0.5 * float(inst.response @ inst.response)
        assert res.log_marginal == pytest.approx(expected, rel=1e-12)

    def test_orthogonal_design_factorizes(self):
        # two orthogonal columns and a binomial dimension prior make the
        # posterior a product of two 1-d problems solvable by quadrature
        n = 16
        col = np.zeros((n, 2))
        col[: n // 2, 0] = 1.0
        col[n // 2 :, 1] = 1.0
        rng = replicate_rng(123, 0)
        theta0 = np.array([1.5, 0.0])
        y = col @ theta0 + rng.standard_normal(n)
        inst = RegressionInstance(col, y)
        h = 0.3
        k = np.arange(3)
        log_binom = np.array([0.0, math.log(2.0), 0.0])
        lw = log_binom + k * math.log(h) + (2 - k) * math.log(1 - h)
        prior = RegressionPrior(lw, 1.0)
        res = enumeration_oracle(inst, prior, 40_000, seed=9)

        lam = 1.0
        for j in range(2):
            xj = col[:, j]
            z = float(xj @ y)
            gram = float(xj @ xj)

            def like(th):
                return math.exp(-0.5 * gram * th * th + th * z)

            m_slab, _ = integrate.quad(lambda th: like(th) * lam / 2 * math.exp(-lam * abs(th)), -20, 20, limit=400)
            odds = h * m_slab / (1 - h)
            incl = odds / (1 + odds)
            assert res.inclusion_probs[j] == pytest.approx(incl, abs=3 * max(res.inclusion_se[j], 1e-3))

    def test_mc_error_scaling(self):
        inst, _ = small_instance(25, 5, [3.0], seed=8)
        prior = bb_prior(5)
        small = enumeration_oracle(inst, prior, 10_000, seed=2)
        large = enumeration_oracle(inst, prior, 40_000, seed=2)
        num = float(np.linalg.norm(large.inclusion_se))
        den = float(np.linalg.norm(small.inclusion_se))
        assert 0.25 <= num / den <= 0.95  # expect about half

    def test_tempered_weights_supported(self):
        inst, _ = small_instance(20, 3, [4.0], seed=4)
        norm_x = float(np.max(np.sqrt((inst.design**2).sum(axis=0))))
        prior = RegressionPrior(-np.log(3.0) * np.arange(4.0), 1.0)
        res = enumeration_oracle(
            inst, prior, 10_000, seed=6, rho=0.5, slab=SlabSpec.cauchy(1.0 / norm_x)
        )
        assert np.isfinite(res.log_marginal)
        assert res.inclusion_probs[0] > 0.9

    def test_refuses_large_p(self):
        inst, _ = small_instance(10, 13, [], seed=0)
        with pytest.raises(ValueError):
            enumeration_oracle(inst, bb_prior(13), 10_000, seed=0)
        inst2, _ = small_instance(10, 3, [], seed=0)
        with pytest.raises(ValueError):
            enumeration_oracle(inst2, bb_prior(3), 500, seed=0)


class TestKlUpperBound:
    def test_point_mass_state_dominated_by_prior_term(self):
        inst, theta0 = small_instance(30, 5, [3.0, -2.0], seed=14)
        prior = bb_prior(5)
        gamma = np.where(theta0 != 0.0, 1.0 - 1e-10, 1e-10)
        state = MeanFieldState(gamma, theta0, np.full(5, 1e-4), np.array([]))
        bound = kl_upper_bound(state, inst, prior, theta0)
        X = inst.design
        fit_term = 0.5 * float(np.sum((X @ (state.posterior_mean - theta0)) ** 2))
        assert np.isfinite(bound)
        assert fit_term <= 0.01 * bound

    def test_upper_bounds_expected_posterior_kl(self):
        # the bound dominates E_theta0 KL(Q, posterior); estimate the right
        # side by the enumeration oracle over fresh data draws
        p = 4
        prior = bb_prior(p)
        design = generate_design(25, p, seed=40)
        theta0 = np.zeros(p)
        theta0[0] = 3.0
        state = MeanFieldState(
            np.array([0.95, 0.02, 0.02, 0.02]), np.array([3.0, 0.0, 0.0, 0.0]),
            np.full(p, 0.2), np.array([]),
        )
        kls = []
        bounds = []
        for rep in range(6):
            rng = replicate_rng(7, rep)
            inst = simulate_instance(design, theta0, rng)
            oracle = enumeration_oracle(inst, prior, 20_000, seed=rep)
            kls.append(oracle.log_marginal - elbo(state, inst, prior))
            bounds.append(kl_upper_bound(state, inst, prior, theta0))
        assert np.mean(kls) <= np.mean(bounds) + 1e-6

    def test_finite_for_every_valid_state(self):
        inst, theta0 = small_instance(20, 6, [2.0], seed=3)
        prior = bb_prior(6)
        rng = np.random.default_rng(0)
        for _ in range(20):
            state = MeanFieldState(
                rng.uniform(0.0, 1.0, 6), rng.uniform(-5, 5, 6), rng.uniform(0.05, 3.0, 6), np.array([])
            )
            assert np.isfinite(kl_upper_bound(state, inst, prior, theta0))


class TestSandwichCondition:
    @pytest.mark.parametrize("p", [50, 200, 800])
    def test_beta_binomial_satisfies_condition(self, p):
        u = 2.0
        lw = beta_binomial_dim_prior(p, 1.0, float(p) ** u)
        assert sandwich_condition_holds(lw, a1=0.5, a3=u, a2=1.0, a4=u - 1.0)

    def test_uniform_weights_fail_upper(self):
        assert not sandwich_condition_holds(np.zeros(11), a1=0.5, a3=2.0, a2=1.0, a4=1.0)
