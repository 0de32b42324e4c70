import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from svjump import model, samplers
from svjump.model import PriorSpec
from svjump.samplers import (
    AdaptiveScale,
    AsisVolScales,
    AuxTuning,
    RejectionStats,
    agrad_update_factors,
    agrad_update_volatility,
    asis_factor_move,
    asis_volatility_move,
    rebuild_factors,
    sample_jump_count,
    sample_jump_counts_row,
    sample_jump_sizes,
    sample_mu_volatility,
    sample_mu_xi,
    sample_sigma2_xi,
    update_loadings,
    whiten_factors,
)


def count_pmf_oracle(r, h, lam_dt, mu_xi, s2_xi, n_max=200):
    """Enumerated count pmf, built from scipy densities only."""
    n = np.arange(n_max + 1)
    logp = (stats.norm.logpdf(r, loc=n * mu_xi,
                              scale=np.sqrt(np.exp(h) + n * s2_xi))
            + stats.poisson.logpmf(n, lam_dt))
    p = np.exp(logp - logp.max())
    p /= p.sum()
    keep = p > 1e-14
    return p, keep


def dense_ar1_precision(phi, sigma2, size, mean=0.0):
    cov = np.empty((size, size))
    for s in range(size):
        for t in range(size):
            cov[s, t] = sigma2 * phi ** abs(s - t) / (1.0 - phi**2)
    return np.linalg.inv(cov)


class TestAdaptiveScale:
    def test_moves_toward_target(self):
        up = AdaptiveScale(1.0, 0.25)
        for _ in range(50):
            up.update(True)
        assert up.value > 1.0
        down = AdaptiveScale(1.0, 0.25)
        for _ in range(50):
            down.update(False)
        assert down.value < 1.0

    def test_frozen_keeps_value_but_tallies(self):
        s = AdaptiveScale(0.5, 0.25, frozen=True)
        for _ in range(10):
            s.update(True)
        assert s.value == 0.5
        assert s.trials == 10 and s.accepts == 10
        assert s.rate == 1.0

    def test_divergence_is_fatal(self):
        s = AdaptiveScale(1.0, 0.25, hi=1.5)
        with pytest.raises(RuntimeError):
            for _ in range(100):
                s.update(True)


class TestJumpCountSampler:
    def test_zero_intensity_forces_zero(self):
        rng = np.random.default_rng(0)
        lam_dt = np.array([0.0, 0.02, 0.0])
        out = sample_jump_counts_row(rng, np.array([5.0, -5.0, 0.3]),
                                     np.array([-0.8, -0.8, -0.8]),
                                     lam_dt, -3.0, 12.25)
        assert out[0] == 0 and out[2] == 0

    def test_vanishing_intensity_small_return(self):
        rng = np.random.default_rng(1)
        draws = sample_jump_counts_row(rng, np.zeros(4000), np.full(4000, -0.85),
                                       np.full(4000, 1e-8), -3.0, 12.25)
        assert np.all(draws == 0)

    def test_tv_distance_reference_case(self):
        # empirical pmf over 1e5 draws within TV 0.01 of the enumerated pmf
        rng = np.random.default_rng(2)
        S = 100_000
        r, h, lam_dt, mu_xi, s2_xi = -5.0, -0.85, 0.02, -3.0, 12.25
        draws = sample_jump_counts_row(rng, np.full(S, r), np.full(S, h),
                                       np.full(S, lam_dt), mu_xi, s2_xi)
        p, _ = count_pmf_oracle(r, h, lam_dt, mu_xi, s2_xi, n_max=50)
        emp = np.bincount(draws, minlength=51)[:51] / S
        assert np.all(draws <= 50)
        tv = 0.5 * np.abs(emp - p).sum()
        assert tv < 0.01

    @pytest.mark.parametrize("r,h,lam_dt,mu_xi,s2_xi", [
        (0.0, 0.0, 0.3, 0.0, 1.0),
        (8.0, -1.5, 0.15, 2.0, 4.0),
        (-12.0, 1.0, 2.5, -1.0, 9.0),
        (3.0, -4.0, 0.45, 0.5, 0.25),
        (25.0, -0.5, 0.05, 5.0, 30.0),
    ])
    def test_tv_distance_grid(self, r, h, lam_dt, mu_xi, s2_xi):
        rng = np.random.default_rng(abs(hash((r, h, lam_dt))) % 2**32)
        S = 100_000
        draws = sample_jump_counts_row(rng, np.full(S, r), np.full(S, h),
                                       np.full(S, lam_dt), mu_xi, s2_xi)
        n_max = max(int(draws.max()) + 10, 60)
        p, _ = count_pmf_oracle(r, h, lam_dt, mu_xi, s2_xi, n_max=n_max)
        emp = np.bincount(draws, minlength=n_max + 1) / S
        tv = 0.5 * np.abs(emp - p).sum()
        assert tv < 0.01

    def test_sharp_case_acceptance_rate(self):
        # tight envelope: overall proposals per draw close to one
        rng = np.random.default_rng(3)
        stats_ = RejectionStats()
        S = 50_000
        sample_jump_counts_row(rng, np.full(S, 0.1), np.full(S, -0.85),
                               np.full(S, 0.02), -3.0, 12.25, stats_)
        proposals = (stats_.draws - stats_.tail_draws) + stats_.tail_proposals
        assert stats_.draws / proposals > 0.9

    def test_scalar_wrapper_and_stats(self):
        rng = np.random.default_rng(4)
        stats_ = RejectionStats()
        n = sample_jump_count(rng, -5.0, -0.85, 0.02, -3.0, 12.25, stats_)
        assert n >= 0
        assert stats_.draws == 1

    def test_normalized_logpmf(self):
        lp = samplers.jump_count_logpmf(-5.0, -0.85, 0.02, -3.0, 12.25, 50)
        assert math.isclose(np.exp(lp).sum(), 1.0, rel_tol=1e-12)

    @given(r=st.floats(-20, 20), h=st.floats(-6, 4),
           lam_dt=st.floats(1e-4, 3.0), mu_xi=st.floats(-8, 8),
           s2_xi=st.floats(0.05, 50.0))
    @settings(max_examples=60, deadline=None)
    def test_draws_live_in_enumeration_support(self, r, h, lam_dt, mu_xi, s2_xi):
        rng = np.random.default_rng(5)
        draws = sample_jump_counts_row(rng, np.full(50, r), np.full(50, h),
                                       np.full(50, lam_dt), mu_xi, s2_xi)
        p, keep = count_pmf_oracle(r, h, lam_dt, mu_xi, s2_xi)
        assert np.all(draws >= 0)
        # every observed value carries enumerated mass above the truncation floor
        assert np.all(p[draws] > 1e-14)


class TestJumpSizes:
    def test_rejects_zero_jumps(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            sample_jump_sizes(rng, 1.0, 0.0, 0, 0.0, 1.0)

    def test_single_jump_moments(self):
        rng = np.random.default_rng(10)
        r, h, mu_xi, s2_xi = 4.0, -0.5, -1.0, 6.0
        eh = math.exp(h)
        mean_true = (mu_xi * eh + r * s2_xi) / (eh + s2_xi)
        var_true = s2_xi * eh / (eh + s2_xi)
        draws = np.array([sample_jump_sizes(rng, r, h, 1, mu_xi, s2_xi)[0]
                          for _ in range(100_000)])
        se = math.sqrt(var_true / draws.size)
        assert abs(draws.mean() - mean_true) < 4 * se
        assert abs(draws.var() - var_true) < 5 * var_true * math.sqrt(2 / draws.size)

    def test_two_jump_mean_and_covariance(self):
        rng = np.random.default_rng(11)
        r, h, n, mu_xi, s2_xi = -6.0, 0.3, 2, -2.0, 9.0
        eh = math.exp(h)
        denom = eh + n * s2_xi
        mean_true = (mu_xi * eh + r * s2_xi) / denom
        cov_true = s2_xi * np.eye(n) - s2_xi**2 / denom * np.ones((n, n))
        draws = np.array([sample_jump_sizes(rng, r, h, n, mu_xi, s2_xi)
                          for _ in range(100_000)])
        se_mean = math.sqrt(cov_true[0, 0] / draws.shape[0])
        assert np.all(np.abs(draws.mean(axis=0) - mean_true) < 4 * se_mean)
        cov_emp = np.cov(draws.T)
        scale = cov_true[0, 0] * math.sqrt(2 / draws.shape[0])
        assert np.all(np.abs(cov_emp - cov_true) < 5 * scale)

    def test_sum_variance_identity(self):
        rng = np.random.default_rng(12)
        r, h, n, mu_xi, s2_xi = 3.0, -1.2, 5, 0.5, 2.0
        eh = math.exp(h)
        var_sum_true = n * s2_xi * eh / (eh + n * s2_xi)
        # identity: sum of all covariance entries collapses to this
        denom = eh + n * s2_xi
        cov_total = n * s2_xi - n**2 * s2_xi**2 / denom
        assert math.isclose(cov_total, var_sum_true, rel_tol=1e-12)
        sums = np.array([sample_jump_sizes(rng, r, h, n, mu_xi, s2_xi).sum()
                         for _ in range(100_000)])
        assert abs(sums.var() - var_sum_true) \
            < 5 * var_sum_true * math.sqrt(2 / sums.size)

    def test_huge_volatility_falls_back_to_prior(self):
        rng = np.random.default_rng(13)
        out = sample_jump_sizes(rng, 2.0, 800.0, 3, -1.0, 4.0)
        assert np.all(np.isfinite(out))


class TestJumpHyperparameters:
    def make_prior(self, rng_range=8.0):
        return PriorSpec.from_ranges(np.array([rng_range]))

    def test_no_jumps_reduces_to_priors(self):
        prior = self.make_prior()
        rng = np.random.default_rng(20)
        v0 = float(prior.mu_xi_var[0])
        mu_draws = np.array([sample_mu_xi(rng, 0, 0.0, 3.0, prior, 0)
                             for _ in range(4000)])
        ks = stats.kstest(mu_draws, stats.norm(0.0, math.sqrt(v0)).cdf)
        assert ks.pvalue > 1e-3
        s2_draws = np.array([sample_sigma2_xi(rng, 0, 0.0, prior, 0)
                             for _ in range(4000)])
        ks2 = stats.kstest(s2_draws, stats.invgamma(
            prior.sigma2_xi_shape, scale=float(prior.sigma2_xi_scale[0])).cdf)
        assert ks2.pvalue > 1e-3

    def test_single_jump_posterior_mean(self):
        prior = self.make_prior()
        rng = np.random.default_rng(21)
        v0 = float(prior.mu_xi_var[0])
        xi, s2_xi = 2.5, 3.0
        mean_true = v0 * xi / (v0 + s2_xi)
        draws = np.array([sample_mu_xi(rng, 1, xi, s2_xi, prior, 0)
                          for _ in range(50_000)])
        sd = math.sqrt(v0 * s2_xi / (v0 + s2_xi))
        assert abs(draws.mean() - mean_true) < 4 * sd / math.sqrt(draws.size)

    def test_conditionals_match_exact_distributions(self):
        prior = self.make_prior()
        rng = np.random.default_rng(22)
        total_jumps, xi_total, s2_xi = 7, -4.2, 2.5
        v0 = float(prior.mu_xi_var[0])
        denom = v0 * total_jumps + s2_xi
        draws = np.array([sample_mu_xi(rng, total_jumps, xi_total, s2_xi, prior, 0)
                          for _ in range(4000)])
        ks = stats.kstest(draws, stats.norm(
            v0 * xi_total / denom, math.sqrt(v0 * s2_xi / denom)).cdf)
        assert ks.pvalue > 1e-3

        sq_dev = 11.3
        shape = prior.sigma2_xi_shape + 0.5 * total_jumps
        scale = float(prior.sigma2_xi_scale[0]) + 0.5 * sq_dev
        s2_draws = np.array([
            sample_sigma2_xi(rng, total_jumps, sq_dev, prior, 0)
            for _ in range(4000)])
        ks2 = stats.kstest(s2_draws, stats.invgamma(shape, scale=scale).cdf)
        assert ks2.pvalue > 1e-3


class TestVolatilityGradient:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(30)
        T = 25
        h = rng.normal(-0.5, 1.0, T + 1)
        r = rng.normal(0, 1.0, T)
        n = rng.integers(0, 3, T)
        mu_xi, s2_xi = -0.5, 4.0
        _, grad = samplers._vol_loglik_and_grad(h, r, n, mu_xi, s2_xi)
        eps = 1e-6
        for t in range(T + 1):
            hp, hm = h.copy(), h.copy()
            hp[t] += eps
            hm[t] -= eps
            gp, _ = samplers._vol_loglik_and_grad(hp, r, n, mu_xi, s2_xi)
            gm, _ = samplers._vol_loglik_and_grad(hm, r, n, mu_xi, s2_xi)
            fd = (gp - gm) / (2 * eps)
            assert abs(grad[t] - fd) <= 1e-6 * max(1.0, abs(fd))

    def test_index_zero_carries_no_observation(self):
        h = np.array([0.3, -0.2, 0.1])
        _, grad = samplers._vol_loglik_and_grad(h, np.array([1.0, -1.0]),
                                                np.array([0, 1]), 0.0, 1.0)
        assert grad[0] == 0.0


class TestAgradVolatility:
    def test_no_data_path_step_always_accepts(self):
        rng = np.random.default_rng(40)
        prior = PriorSpec.from_ranges(np.array([4.0]))
        tune = AuxTuning()
        tune.freeze()
        h = np.array([0.7])
        phi, s2 = 0.9, 0.1
        empty = np.zeros(0)
        for _ in range(300):
            h, phi, s2, diag = agrad_update_volatility(
                rng, h, phi, s2, -0.5, empty, empty.astype(int), 0.0, 1.0,
                prior, tune)
            assert diag.accept_path
        assert tune.gamma.value == 0.1

    def test_chain_stays_finite_and_adapts(self):
        rng = np.random.default_rng(41)
        prior = PriorSpec.from_ranges(np.array([4.0]))
        tune = AuxTuning()
        T = 60
        mu, phi, s2 = -0.8, 0.9, 0.2
        h = mu + rng.normal(0, 0.3, T + 1)
        r = np.exp(h[1:] / 2) * rng.normal(0, 1, T)
        n = np.zeros(T, dtype=int)
        path_accepts = 0
        for _ in range(400):
            h, phi, s2, diag = agrad_update_volatility(
                rng, h, phi, s2, mu, r, n, 0.0, 1.0, prior, tune)
            path_accepts += diag.accept_path
            mu = sample_mu_volatility(rng, h, phi, s2, prior)
        assert np.all(np.isfinite(h))
        assert -1 < phi < 1 and s2 > 0
        assert path_accepts > 0
        assert tune.gamma.step == 400 and tune.kappa.step == 400
        # adaptation pushes the path acceptance toward its target band
        assert 0.2 < tune.gamma.rate < 0.95

    def test_hyperparameter_step_can_be_disabled(self):
        rng = np.random.default_rng(42)
        prior = PriorSpec.from_ranges(np.array([4.0]))
        tune = AuxTuning()
        h = np.array([-0.5, -0.4, -0.6])
        r = np.array([0.1, -0.2])
        n = np.zeros(2, dtype=int)
        h2, phi2, s22, _ = agrad_update_volatility(
            rng, h, 0.8, 0.3, -0.5, r, n, 0.0, 1.0, prior, tune,
            update_hyperparams=False)
        assert phi2 == 0.8 and s22 == 0.3
        assert tune.kappa.step == 0


class TestSampleMuVolatility:
    def test_matches_dense_conjugate_algebra(self):
        rng = np.random.default_rng(50)
        prior = PriorSpec()
        phi, s2 = 0.85, 0.4
        h = rng.normal(-1.0, 0.8, 13)
        P = dense_ar1_precision(phi, s2, h.size)
        one = np.ones(h.size)
        prec_post = one @ P @ one + 1.0 / prior.mu_var
        mean_post = (one @ P @ h) / prec_post
        draws = np.array([sample_mu_volatility(rng, h, phi, s2, prior)
                          for _ in range(40_000)])
        sd_post = math.sqrt(1.0 / prec_post)
        assert abs(draws.mean() - mean_post) < 4 * sd_post / math.sqrt(draws.size)
        assert abs(draws.var() / (1.0 / prec_post) - 1.0) < 0.05

    def test_flat_path_shrinks_toward_prior_mean(self):
        rng = np.random.default_rng(51)
        prior = PriorSpec()
        c = 3.0
        h = np.full(21, c)
        draws = np.array([sample_mu_volatility(rng, h, 0.0, 0.5, prior)
                          for _ in range(5000)])
        assert 0.0 < draws.mean() < c


class TestAsisVolatility:
    def test_transform_round_trip(self):
        rng = np.random.default_rng(60)
        h = rng.normal(-0.8, 0.5, 30)
        mu, s2 = -0.8, 0.04
        htil = (h - mu) / math.sqrt(s2)
        back = mu + math.sqrt(s2) * htil
        assert np.max(np.abs(back - h)) < 1e-14

    def test_noncentred_likelihood_equals_centred(self):
        rng = np.random.default_rng(61)
        T = 15
        mu, s2 = -0.6, 0.09
        h = mu + rng.normal(0, 0.4, T + 1)
        r = rng.normal(0, 1, T)
        n = rng.integers(0, 3, T)
        mu_xi, s2_xi = -1.0, 2.0
        htil = (h - mu) / math.sqrt(s2)
        var_nc = n * s2_xi + np.exp(mu + math.sqrt(s2) * htil[1:])
        ll_nc = np.sum(-0.5 * (np.log(2 * np.pi * var_nc)
                               + (r - n * mu_xi) ** 2 / var_nc))
        ll_c = model.cell_loglik_marginal(r, h[1:], n, mu_xi, s2_xi).sum()
        assert math.isclose(ll_nc, ll_c, rel_tol=1e-12)

    def test_phi_proposal_concentrates_near_truth(self):
        rng = np.random.default_rng(62)
        T = 20_000
        phi_true = 0.7
        htil = np.empty(T + 1)
        htil[0] = rng.normal(0, math.sqrt(1 / (1 - phi_true**2)))
        eps = rng.normal(0, 1, T)
        for t in range(T):
            htil[t + 1] = phi_true * htil[t] + eps[t]
        prop_mean = (htil[1:] @ htil[:-1]) / (htil[:-1] @ htil[:-1])
        assert abs(prop_mean - phi_true) < 0.03

    def test_move_keeps_state_valid(self):
        rng = np.random.default_rng(63)
        prior = PriorSpec.from_ranges(np.array([4.0]))
        scales = AsisVolScales()
        T = 50
        mu, phi, s2 = -0.8, 0.9, 0.2
        h = mu + rng.normal(0, 0.3, T + 1)
        r = np.exp(h[1:] / 2) * rng.normal(0, 1, T)
        n = np.zeros(T, dtype=int)
        for _ in range(400):
            h, mu, phi, s2, acc = asis_volatility_move(
                rng, h, mu, phi, s2, r, n, 0.0, 1.0, prior, scales)
            assert acc.shape == (3,)
        assert np.all(np.isfinite(h))
        assert -1 < phi < 1 and s2 > 0
        assert scales.mu.trials == 400


class TestFactorGradient:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(70)
        K, p, T = 2, 3, 6
        f = rng.normal(0, 1, (K, T + 1))
        b = rng.normal(-5, 1, p)
        w = rng.normal(0, 0.7, (p, K))
        n_mat = rng.integers(0, 3, (p, T))
        dt_mat = np.ones((p, T))
        _, grad = samplers._factor_loglik_and_grad(f, b, w, n_mat, dt_mat, 0.15)
        eps = 1e-6
        for k in range(K):
            for t in range(T + 1):
                fp, fm = f.copy(), f.copy()
                fp[k, t] += eps
                fm[k, t] -= eps
                gp, _ = samplers._factor_loglik_and_grad(fp, b, w, n_mat,
                                                         dt_mat, 0.15)
                gm, _ = samplers._factor_loglik_and_grad(fm, b, w, n_mat,
                                                         dt_mat, 0.15)
                fd = (gp - gm) / (2 * eps)
                assert abs(grad[k, t] - fd) <= 1e-6 * max(1.0, abs(fd))
        assert np.all(grad[:, 0] == 0.0)


class TestAgradFactors:
    def test_no_data_path_step_always_accepts(self):
        rng = np.random.default_rng(80)
        tune = AuxTuning()
        tune.freeze()
        K, p, T = 2, 2, 8
        f = rng.normal(0, 1, (K, T + 1))
        alpha = np.array([0.8, -0.4])
        b = np.full(p, -5.0)
        w = rng.normal(0, 0.7, (p, K))
        zeros = np.zeros((p, T))
        for _ in range(100):
            f, alpha, diag = agrad_update_factors(
                rng, f, alpha, b, w, zeros.astype(int), zeros, 0.15, tune)
            assert diag.accept_path

    def test_chain_stays_valid(self):
        rng = np.random.default_rng(81)
        tune = AuxTuning()
        K, p, T = 1, 3, 40
        alpha = np.array([0.6])
        f = np.zeros((K, T + 1))
        f[0, 0] = rng.normal(0, math.sqrt(1 / (1 - 0.36)))
        for t in range(T):
            f[0, t + 1] = 0.6 * f[0, t] + rng.normal()
        b = np.full(p, -4.0)
        w = np.full((p, K), 0.8)
        lam = model.intensity_from_factors(b, w, f, 0.15)
        dt_mat = np.ones((p, T))
        n_mat = rng.poisson(lam * dt_mat)
        for _ in range(300):
            f, alpha, diag = agrad_update_factors(
                rng, f, alpha, b, w, n_mat, dt_mat, 0.15, tune)
        assert np.all(np.abs(alpha) < 1)
        assert np.all(np.isfinite(f))
        assert tune.gamma.step == 300

    def test_hyperparameter_step_can_be_disabled(self):
        rng = np.random.default_rng(82)
        tune = AuxTuning()
        f = np.zeros((1, 5))
        alpha = np.array([0.5])
        b, w = np.array([-5.0]), np.array([[0.7]])
        n_mat = np.zeros((1, 4), dtype=int)
        dt_mat = np.ones((1, 4))
        _, alpha2, _ = agrad_update_factors(rng, f, alpha, b, w, n_mat, dt_mat,
                                            0.15, tune, update_hyperparams=False)
        assert alpha2[0] == 0.5
        assert tune.kappa.step == 0


class TestAsisFactors:
    def test_whiten_rebuild_round_trip(self):
        rng = np.random.default_rng(90)
        K, T = 3, 25
        alpha = np.array([0.8, -0.4, 0.1])
        f = rng.normal(0, 1, (K, T + 1))
        gam = whiten_factors(f, alpha)
        back = rebuild_factors(gam, alpha)
        assert np.max(np.abs(back - f)) < 1e-12

    def test_innovations_standard_normal_under_prior(self):
        rng = np.random.default_rng(91)
        K, T = 1, 50_000
        alpha = np.array([0.85])
        f = np.empty((K, T + 1))
        f[0, 0] = rng.normal(0, math.sqrt(1 / (1 - alpha[0] ** 2)))
        for t in range(T):
            f[0, t + 1] = alpha[0] * f[0, t] + rng.normal()
        gam = whiten_factors(f, alpha)
        assert abs(gam.mean()) < 0.02
        assert abs(gam.var() - 1.0) < 0.03

    def test_move_updates_alpha_and_paths_together(self):
        rng = np.random.default_rng(92)
        scale = AdaptiveScale(0.2, 0.25)
        K, p, T = 2, 4, 30
        alpha = np.array([0.7, -0.3])
        f = rng.normal(0, 1, (K, T + 1))
        b = np.full(p, -4.5)
        w = rng.normal(0, 0.7, (p, K))
        dt_mat = np.ones((p, T))
        lam = model.intensity_from_factors(b, w, f, 0.15)
        n_mat = rng.poisson(lam * dt_mat)
        saw_accept = False
        for _ in range(200):
            f2, alpha2, accepted = asis_factor_move(
                rng, f, alpha, b, w, n_mat, dt_mat, 0.15, scale)
            if accepted:
                saw_accept = True
                # innovations preserved across the move
                assert np.allclose(whiten_factors(f2, alpha2),
                                   whiten_factors(f, alpha), atol=1e-10)
            else:
                assert np.array_equal(f2, f) and np.array_equal(alpha2, alpha)
            f, alpha = f2, alpha2
        assert saw_accept


class TestUpdateLoadings:
    def test_zero_factors_leave_loadings_at_prior(self):
        rng = np.random.default_rng(100)
        prior = PriorSpec()
        scale = AdaptiveScale(0.6, 0.25)
        K, T = 1, 40
        f = np.zeros((K, T + 1))
        dt_row = np.ones(T)
        n_row = rng.poisson(0.05, T)
        b, w = -5.0, np.zeros(K)
        w_draws = []
        for it in range(30_000):
            b, w, _ = update_loadings(rng, b, w, f, n_row, dt_row, prior, scale)
            if it >= 5000 and it % 10 == 0:
                w_draws.append(w[0])
        w_draws = np.array(w_draws)
        assert abs(w_draws.mean()) < 0.1
        assert abs(w_draws.var() - prior.w_var) < 0.12

    def test_acceptance_bookkeeping(self):
        rng = np.random.default_rng(101)
        prior = PriorSpec()
        scale = AdaptiveScale(0.3, 0.25)
        f = np.zeros((1, 11))
        b, w = -5.0, np.zeros(1)
        for _ in range(50):
            b, w, _ = update_loadings(rng, b, w, f, np.zeros(10, dtype=int),
                                      np.ones(10), prior, scale)
        assert scale.trials == 50
