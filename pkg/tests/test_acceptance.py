"""Acceptance gate: one test per release criterion, tolerances pinned.

Each test is self-contained (or shares a module fixture) and asserts
both the statistical claim and, where one applies, the wall-clock
budget.  The full factor-recovery experiment (criterion 6 at scale)
runs only when SVJUMP_FULL_ACCEPTANCE=1; the default suite runs its
mandated smoke version.  Criterion 11's reference row is asserted
last inside its test because the published values for that row are
not reachable from the stated construction (see the row-by-row
comparison in the assertion message); the two side rows verify the
implementation against the same source.
"""

import math
import os
import time

import numpy as np
import pandas as pd
import pytest
from scipy import integrate, special, stats

from svjump import cli, forecast as fc, model, samplers
from svjump.mcmc import McmcConfig, effective_sample_size, geweke_compare, \
    run_chain
from svjump.model import FactorParams, PriorSpec, StockParams, \
    elicit_intensity_prior
from svjump.samplers import _factor_loglik_and_grad, _vol_loglik_and_grad
from svjump.simulate import simulate_panel

GEWEKE_PRIOR = PriorSpec(sigma2_xi_scale=np.array([0.5]),
                         mu_xi_var=np.array([2.0]))

FULL_RUN = os.environ.get("SVJUMP_FULL_ACCEPTANCE") == "1"


# ---------------------------------------------------------------------------
# criterion 1: exactness of the count rejection sampler


def test_criterion_01_count_sampler_total_variation():
    t0 = time.monotonic()
    rng = np.random.default_rng(101)
    n_draws = 100000
    h, mu_xi, s2_xi = -0.6, -1.5, 2.25
    sd = math.exp(h / 2)
    worst = 0.0
    for lam_dt in (0.005, 0.02, 0.15):
        for r in (-5.0 * sd, -5.0 * sd / 3, 5.0 * sd / 3, 5.0 * sd):
            draws = samplers.sample_jump_counts_row(
                rng, np.full(n_draws, r), np.full(n_draws, h),
                np.full(n_draws, lam_dt), mu_xi, s2_xi)
            pmf = np.exp(samplers.jump_count_logpmf(r, h, lam_dt, mu_xi,
                                                    s2_xi, n_max=60))
            emp = np.bincount(draws, minlength=61)[:61] / n_draws
            tv = 0.5 * np.abs(emp - pmf).sum()
            assert tv < 0.01, (lam_dt, r, tv)
            worst = max(worst, tv)
    elapsed = time.monotonic() - t0
    assert elapsed < 30.0, elapsed
    print(f"criterion 1: worst TV {worst:.5f} over 12 settings, "
          f"{elapsed:.1f}s")


# ---------------------------------------------------------------------------
# criterion 2: jump-size conditional against its closed form


def test_criterion_02_jump_size_moments_and_quadrature():
    rng = np.random.default_rng(202)
    r, h, mu_xi, s2_xi = 1.7, -0.4, -0.6, 0.8
    s = math.exp(h)
    M = 120000
    for n in (1, 2, 5):
        denom = s + n * s2_xi
        mean_true = (mu_xi * s + r * s2_xi) / denom
        cov_true = s2_xi * np.eye(n) - (s2_xi**2 / denom) * np.ones((n, n))
        draws = np.empty((M, n))
        for m in range(M):
            draws[m] = samplers.sample_jump_sizes(rng, r, h, n, mu_xi, s2_xi)
        mean_hat = draws.mean(axis=0)
        se_mean = draws.std(axis=0, ddof=1) / math.sqrt(M)
        assert np.all(np.abs(mean_hat - mean_true) < 3 * se_mean), n
        cov_hat = np.cov(draws.T).reshape(n, n)
        var = np.diag(cov_true)
        se_cov = np.sqrt((np.outer(var, var) + cov_true**2) / M)
        assert np.all(np.abs(cov_hat - cov_true) < 3 * se_cov), n

    # the two-jump marginal of the return against direct 2-D quadrature
    closed = math.exp(model.cell_loglik_marginal(r, h, 2, mu_xi, s2_xi))
    sd_xi = math.sqrt(s2_xi)

    def integrand(x2, x1):
        return math.exp(
            model.norm_logpdf(r, x1 + x2, s)
            + model.norm_logpdf(x1, mu_xi, s2_xi)
            + model.norm_logpdf(x2, mu_xi, s2_xi))

    lo, hi = mu_xi - 10 * sd_xi, mu_xi + 10 * sd_xi
    quad_val, quad_err = integrate.dblquad(integrand, lo, hi, lo, hi,
                                           epsabs=1e-10, epsrel=1e-10)
    assert quad_err < 1e-8
    assert abs(closed - quad_val) < 1e-6, (closed, quad_val)
    print(f"criterion 2: closed form {closed:.9f} vs quadrature "
          f"{quad_val:.9f}")


# ---------------------------------------------------------------------------
# criterion 3: analytic path gradients against central differences


def central_diff(fun, x, eps=1e-5):
    g = np.zeros_like(x)
    for j in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp.flat[j] += eps
        xm.flat[j] -= eps
        g.flat[j] = (fun(xp) - fun(xm)) / (2 * eps)
    return g


def test_criterion_03_gradient_checks():
    rng = np.random.default_rng(303)
    T = 25
    for _ in range(20):
        h = rng.normal(-1.0, 1.0, T + 1)
        r = rng.normal(0.0, 2.0, T)
        n = rng.poisson(0.5, T)
        mu_xi = rng.normal(0.0, 1.5)
        s2_xi = rng.uniform(0.5, 4.0)
        _, grad = _vol_loglik_and_grad(h, r, n, mu_xi, s2_xi)
        fd = central_diff(
            lambda x: _vol_loglik_and_grad(x, r, n, mu_xi, s2_xi)[0], h)
        assert np.all(np.abs(grad - fd) <= 1e-6 * np.maximum(1.0,
                                                             np.abs(grad)))

    K, p, T = 2, 5, 18
    for _ in range(20):
        f = rng.normal(0.0, 1.0, (K, T + 1))
        b = rng.normal(-4.0, 1.0, p)
        w = rng.normal(0.0, 0.7, (p, K))
        n_mat = rng.poisson(0.4, (p, T))
        dt_mat = rng.choice([1.0, 3.0], (p, T))
        _, grad = _factor_loglik_and_grad(f, b, w, n_mat, dt_mat, 0.15)
        fd = central_diff(
            lambda x: _factor_loglik_and_grad(x.reshape(K, T + 1), b, w,
                                              n_mat, dt_mat, 0.15)[0],
            f.ravel()).reshape(K, T + 1)
        assert np.all(np.abs(grad - fd) <= 1e-6 * np.maximum(1.0,
                                                             np.abs(grad)))
    print("criterion 3: 40 random states matched to 1e-6 relative")


# ---------------------------------------------------------------------------
# criterion 4: joint-distribution tests of every sampler variant


def test_criterion_04_joint_distribution_tests():
    t0 = time.monotonic()
    settings = [
        ("sv", 0, 30),
        ("svj_independent", 0, 20),
        ("svj_factor", 1, 20),
    ]
    worst = {}
    for variant, K, T in settings:
        cfg = McmcConfig(iterations=10, burn_in=0, variant=variant,
                         n_factors=K, seed=3)
        rep = geweke_compare(GEWEKE_PRIOR, cfg, p=2, T=T, n_sweeps=100000,
                             seed=7)
        assert rep.passed, (variant, rep.z_scores)
        worst[variant] = rep.worst
    elapsed = time.monotonic() - t0
    assert elapsed < 1200.0, elapsed
    print("criterion 4: worst |z| per variant "
          + ", ".join(f"{k}={v:.2f}" for k, v in worst.items())
          + f"; {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# criterion 5: parameter recovery on persistent-volatility panels


def test_criterion_05_parameter_recovery():
    t0 = time.monotonic()
    true = StockParams(mu=-0.85, phi=0.98, sigma2_eta=0.12**2, mu_xi=0.0,
                       sigma2_xi=3.5**2)
    truth = {"mu": true.mu, "phi": true.phi, "sigma2_eta": true.sigma2_eta,
             "sigma2_xi": true.sigma2_xi}
    covered = {k: 0 for k in truth}
    n_pairs = 0
    big_total = 0
    big_found = 0
    for rep in range(10):
        panel, latent = simulate_panel([true] * 4, "svj_independent", 1500,
                                       seed=500 + rep)
        cfg = McmcConfig(iterations=6000, burn_in=2000, seed=900 + rep,
                         path_stride=10**9)
        draws = run_chain(panel, PriorSpec.from_panel(panel), cfg)
        chains = {"mu": draws.mu, "phi": draws.phi,
                  "sigma2_eta": draws.sigma2_eta,
                  "sigma2_xi": draws.sigma2_xi}
        for i in range(4):
            n_pairs += 1
            for k, chain in chains.items():
                lo, hi = np.quantile(chain[:, i], [0.025, 0.975])
                covered[k] += int(lo <= truth[k] <= hi)
        for i in range(4):
            for t, sizes in latent.xi[i].items():
                if np.any(np.abs(sizes)
                          > 2.0 * math.exp(latent.h[i, t + 1] / 2)):
                    big_total += 1
                    big_found += int(draws.jump_prob[i, t] > 0.5)
    for k, hits in covered.items():
        assert hits >= 0.8 * n_pairs, (k, hits, n_pairs)
    assert big_total > 0
    rate = big_found / big_total
    assert rate >= 0.8, (big_found, big_total)
    elapsed = time.monotonic() - t0
    assert elapsed < 3600.0, elapsed
    print(f"criterion 5: coverage {covered} of {n_pairs}; outsized jumps "
          f"found {big_found}/{big_total} ({rate:.2f}); {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# criteria 6 and 10 share the factor smoke experiment


SMOKE_T_IN = 500
SMOKE_HORIZON = 5


@pytest.fixture(scope="module")
def factor_smoke():
    """p=20 joint-intensity panel: simulate 505 days, fit the first 500."""
    t0 = time.monotonic()
    rng = np.random.default_rng(41)
    sps = [StockParams(mu=-0.85, phi=0.98, sigma2_eta=0.12**2, mu_xi=0.0,
                       sigma2_xi=3.5**2, b=float(rng.normal(-2.45, 1.0)),
                       w=rng.normal(0.0, 1.0, 2)) for _ in range(20)]
    fp = FactorParams(alpha=np.array([0.85, -0.45]))
    panel, latent = simulate_panel(sps, "svj_factor",
                                   SMOKE_T_IN + SMOKE_HORIZON,
                                   factor_params=fp, seed=41)
    sub = model.ReturnsPanel(values=panel.values[:, :SMOKE_T_IN],
                             deltas=panel.deltas[:, :SMOKE_T_IN])
    cfg = McmcConfig(iterations=2600, burn_in=600, variant="svj_factor",
                     n_factors=2, seed=17, path_stride=10)
    # intensity prior centered on the design that generated the panel,
    # mirroring the full-scale experiment's configuration
    prior = PriorSpec.from_panel(sub, b_mean=-2.45, b_var=1.0, w_var=1.0)
    draws = run_chain(sub, prior, cfg)
    return {"panel": panel, "latent": latent, "draws": draws,
            "fit_seconds": time.monotonic() - t0}


def test_criterion_06_factor_recovery(factor_smoke):
    draws = factor_smoke["draws"]
    latent = factor_smoke["latent"]
    assert factor_smoke["fit_seconds"] < 900.0, factor_smoke["fit_seconds"]

    # factors are exchangeable, so order each draw before summarizing
    alpha_sorted = np.sort(draws.alpha, axis=1)[:, ::-1]
    for k, target in enumerate((0.85, -0.45)):
        lo, hi = np.quantile(alpha_sorted[:, k], [0.025, 0.975])
        assert lo <= target <= hi, (k, lo, target, hi)

    lam_true = latent.lam[:, :SMOKE_T_IN]
    baseline = elicit_intensity_prior(-5.0, 1.0, 0.5, 2).mean
    rmse_post = float(np.sqrt(np.mean((draws.lam_mean - lam_true) ** 2)))
    rmse_base = float(np.sqrt(np.mean((baseline - lam_true) ** 2)))
    factor = rmse_base / rmse_post
    assert factor >= 5.0, (rmse_post, rmse_base)
    print(f"criterion 6 (smoke): intensity RMSE improved {factor:.1f}x, "
          f"fit {factor_smoke['fit_seconds']:.0f}s")


@pytest.mark.skipif(not FULL_RUN, reason="set SVJUMP_FULL_ACCEPTANCE=1 "
                    "for the four-hour factor recovery experiment")
def test_criterion_06_factor_recovery_full():
    t0 = time.monotonic()
    rng = np.random.default_rng(61)
    sps = [StockParams(mu=-0.85, phi=0.98, sigma2_eta=0.12**2, mu_xi=0.0,
                       sigma2_xi=3.5**2, b=float(rng.normal(-2.45, 1.0)),
                       w=rng.normal(0.0, 1.0, 2)) for _ in range(100)]
    fp = FactorParams(alpha=np.array([0.85, -0.45]))
    panel, latent = simulate_panel(sps, "svj_factor", 1500,
                                   factor_params=fp, seed=61)
    cfg = McmcConfig(iterations=12000, burn_in=4000, thin=2,
                     variant="svj_factor", n_factors=2, seed=67,
                     path_stride=10**9)
    prior = PriorSpec.from_panel(panel, b_mean=-2.45, b_var=1.0, w_var=1.0)
    draws = run_chain(panel, prior, cfg)
    alpha_sorted = np.sort(draws.alpha, axis=1)[:, ::-1]
    for k, target in enumerate((0.85, -0.45)):
        lo, hi = np.quantile(alpha_sorted[:, k], [0.025, 0.975])
        assert lo <= target <= hi, (k, lo, target, hi)
    baseline = elicit_intensity_prior(-5.0, 1.0, 0.5, 2).mean
    rmse_post = float(np.sqrt(np.mean((draws.lam_mean - latent.lam) ** 2)))
    rmse_base = float(np.sqrt(np.mean((baseline - latent.lam) ** 2)))
    assert rmse_base / rmse_post >= 5.0, (rmse_post, rmse_base)
    elapsed = time.monotonic() - t0
    assert elapsed < 14400.0, elapsed
    print(f"criterion 6 (full): RMSE improved {rmse_base / rmse_post:.1f}x, "
          f"{elapsed:.0f}s")


# ---------------------------------------------------------------------------
# criterion 7: interweaving must help the vol-of-vol chain


def test_criterion_07_interweaving_benefit():
    true = StockParams(mu=-0.85, phi=0.98, sigma2_eta=0.12**2)
    wins = 0
    pairs = []
    for rep in range(10):
        panel, _ = simulate_panel([true], "sv", 1500, seed=700 + rep)
        prior = PriorSpec.from_panel(panel)
        ess = {}
        for use_asis in (True, False):
            cfg = McmcConfig(iterations=3000, burn_in=500, variant="sv",
                             seed=100 + rep, use_asis=use_asis,
                             path_stride=10**9)
            draws = run_chain(panel, prior, cfg)
            ess[use_asis] = float(effective_sample_size(
                np.sqrt(draws.sigma2_eta[:, 0])))
        pairs.append((ess[True], ess[False]))
        wins += int(ess[True] > ess[False])
    assert wins >= 8, pairs
    print(f"criterion 7: interweaving won {wins}/10; "
          + " ".join(f"({a:.0f} vs {b:.0f})" for a, b in pairs))


# ---------------------------------------------------------------------------
# criterion 8: particle-filter unbiasedness in the degenerate limit


def test_criterion_08_degenerate_unbiasedness():
    # vol-of-vol at 1e-12 makes each particle's path deterministic given
    # its starting atom (wiggle ~1e-6 in h, far below Monte Carlo
    # resolution), so the target is an exact finite mixture over atoms
    params = StockParams(mu=-0.5, phi=0.9, sigma2_eta=1e-12, mu_xi=-3.0,
                         sigma2_xi=9.0)
    atoms = np.linspace(-2.2, 1.2, 40)
    returns = np.array([0.11, -0.23, 0.05, 0.18, -0.09, 0.14, 5.6, -0.21,
                        0.07, -0.16, 0.24, 0.03, -0.12, -6.1, 0.19, -0.06,
                        0.15, -0.27, 0.08, 0.22])
    deltas = np.ones(returns.size)
    kurt = stats.kurtosis(returns, fisher=False)
    assert kurt > 6.0, kurt

    log_pn = fc.nb_count_logpmf(1.0, 1.0, 50.0, truncation=10)
    ll = np.zeros(atoms.size)
    h = atoms.copy()
    for r in returns:
        h = params.mu + params.phi * (h - params.mu)
        ll += fc.predictive_logdensity(r, h, log_pn, params.mu_xi,
                                       params.sigma2_xi)
    truth = float(special.logsumexp(ll) - math.log(atoms.size))

    runs = 200
    ratios = np.empty(runs)
    resamples = 0
    for k in range(runs):
        inc, cloud = fc.particle_filter(
            atoms, params, returns, deltas, n_particles=300,
            truncation=10, seed=8000 + k, return_cloud=True)
        ratios[k] = math.exp(inc.sum() - truth)
        assert cloud.resample_count >= 1, k
        resamples += cloud.resample_count
    se = ratios.std(ddof=1) / math.sqrt(runs)
    assert abs(ratios.mean() - 1.0) < 3 * se, (ratios.mean(), se)
    print(f"criterion 8: mean likelihood ratio {ratios.mean():.4f} "
          f"(se {se:.4f}), {resamples} resamples over {runs} runs")


# ---------------------------------------------------------------------------
# criterion 9: predictive Bayes factors point the right way


def _fit(panel, variant, n_factors, seed, iterations=1000, burn_in=300,
         path_stride=10**9, **prior_overrides):
    cfg = McmcConfig(iterations=iterations, burn_in=burn_in, variant=variant,
                     n_factors=n_factors, seed=seed, path_stride=path_stride)
    return run_chain(panel, PriorSpec.from_panel(panel, **prior_overrides),
                     cfg)


def _pf_curves(draws, panel, cols, seed, n_particles=2000,
               variant="svj_independent", intensity_rate=50.0):
    p = panel.values.shape[0]
    children = np.random.SeedSequence(seed).spawn(p)
    out = np.empty((p, len(cols)))
    for i, sp in enumerate(draws.posterior_mean_params()):
        out[i] = fc.particle_filter(
            draws.h_last[:, i], sp, panel.values[i, cols],
            panel.deltas[i, cols], n_particles=n_particles,
            variant=variant, intensity_rate=intensity_rate,
            rng=np.random.default_rng(children[i]))
    return np.cumsum(out, axis=1)


def test_criterion_09_bayes_factor_directions():
    # jump model against the no-jump model: growing evidence; jumps are
    # frequent enough that every stretch of the window contains some
    true = StockParams(mu=-0.6, phi=0.9, sigma2_eta=0.05, mu_xi=0.0,
                       sigma2_xi=12.25)
    horizon = 30
    seed = 0
    while True:
        panel, latent = simulate_panel([true] * 4, "svj_independent", 280,
                                       seed=9000 + seed, intensity_rate=10.0)
        oos_days = (latent.n[:, 250:] > 0).any(axis=0)
        thirds = oos_days.reshape(3, 10).any(axis=1)
        if oos_days.sum() >= 8 and thirds.all():
            break
        seed += 1
    ins = model.ReturnsPanel(values=panel.values[:, :250],
                             deltas=panel.deltas[:, :250])
    cols = np.arange(250, 280)
    svj = _fit(ins, "svj_independent", 0, seed=910, c=10.0)
    sv = _fit(ins, "sv", 0, seed=911)
    bf = (_pf_curves(svj, panel, cols, seed=9100,
                     intensity_rate=10.0).sum(axis=0)
          - _pf_curves(sv, panel, cols, seed=9101,
                       variant="sv").sum(axis=0))
    rho = stats.spearmanr(bf, np.arange(1, horizon + 1)).statistic
    assert bf[-1] > 0.0, bf[-1]
    assert rho > 0.9, (rho, bf)

    # joint intensities against independent ones, per-stock product form
    wins = 0
    finals = []
    for s in range(10):
        rng = np.random.default_rng(9200 + s)
        sps = [StockParams(mu=-0.7, phi=0.9, sigma2_eta=0.05, mu_xi=-3.0,
                           sigma2_xi=9.0, b=-3.2,
                           w=np.array([rng.normal(1.5, 0.3)]))
               for _ in range(3)]
        fp = FactorParams(alpha=np.array([0.9]))
        panel, _ = simulate_panel(sps, "svj_factor", 210, factor_params=fp,
                                  seed=9300 + s)
        ins = model.ReturnsPanel(values=panel.values[:, :200],
                                 deltas=panel.deltas[:, :200])
        fac = _fit(ins, "svj_factor", 1, seed=920 + s, iterations=800,
                   path_stride=2)
        ind = _fit(ins, "svj_independent", 0, seed=960 + s, iterations=800)
        ens = fc.ais_forecast(
            fac.h_paths, fac.f_paths, fac.n_paths, ins.values, ins.deltas,
            fac.posterior_mean_params(),
            FactorParams(alpha=fac.alpha.mean(axis=0)),
            panel.values[:, 200:], panel.deltas[:, 200:],
            n_trajectories=150, bridge_sweeps=2, seed=930 + s,
            calibration_sweeps=50)
        cols = np.arange(200, 210)
        log_bf = (ens.product_curve()[-1]
                  - _pf_curves(ind, panel, cols, seed=9400 + s)[:, -1].sum())
        finals.append(float(log_bf))
        wins += int(log_bf > 0.0)
    assert wins >= 8, finals
    print(f"criterion 9: jump-vs-none log BF rho {rho:.3f}, final "
          f"{bf[-1]:.1f}; joint-vs-independent positive {wins}/10 "
          + " ".join(f"{v:.2f}" for v in finals))


# ---------------------------------------------------------------------------
# criterion 10: per-stock weights beat the global weight in variance


def test_criterion_10_per_stock_weight_variance(factor_smoke):
    panel = factor_smoke["panel"]
    draws = factor_smoke["draws"]
    ins_values = panel.values[:, :SMOKE_T_IN]
    ins_deltas = panel.deltas[:, :SMOKE_T_IN]
    ens = fc.ais_forecast(
        draws.h_paths, draws.f_paths, draws.n_paths, ins_values, ins_deltas,
        draws.posterior_mean_params(),
        FactorParams(alpha=draws.alpha.mean(axis=0)),
        panel.values[:, SMOKE_T_IN:], panel.deltas[:, SMOKE_T_IN:],
        n_trajectories=120, bridge_sweeps=1, seed=77, calibration_sweeps=50)
    var_global = float(ens.log_Omega.var(ddof=1))
    var_stocks = ens.log_omega.var(axis=0, ddof=1)
    assert np.all(var_stocks < var_global), (var_stocks.max(), var_global)
    print(f"criterion 10: max per-stock weight variance "
          f"{var_stocks.max():.3f} < global {var_global:.3f} "
          f"over {ens.log_omega.shape[1]} stocks")


# ---------------------------------------------------------------------------
# criterion 11: implied-intensity prior against its published table


def test_criterion_11_intensity_prior_table():
    side_a = elicit_intensity_prior(-2.4, 1.0, 0.5, 2)
    assert abs(side_a.mean - 0.021) <= 0.1 * 0.021, side_a.mean
    assert abs(side_a.var - 0.00054) <= 0.1 * 0.00054, side_a.var
    assert abs(side_a.mode - 0.002) <= 0.1 * 0.002, side_a.mode

    side_b = elicit_intensity_prior(-10.0, 1.0, 0.5, 2)
    assert abs(side_b.mean - 2e-5) <= 0.1 * 2e-5, side_b.mean
    assert abs(side_b.mode - 1e-6) <= 0.1 * 1e-6, side_b.mode

    # reference row: the published (mean, variance, mode) for the
    # default hyperparameters; exact quadrature of the stated density
    # gives (0.0024964, 2.236e-5, 1.372e-4), so this clause cannot pass
    # within 10% while the construction matches the two rows above
    row = elicit_intensity_prior(-5.0, 1.0, 0.5, 2)
    assert abs(row.mean - 0.003) <= 0.1 * 0.003, \
        f"mean {row.mean} vs published 0.003"
    assert abs(row.var - 0.00004) <= 0.1 * 0.00004, \
        f"var {row.var} vs published 0.00004"
    assert abs(row.mode - 0.0001) <= 0.1 * 0.0001, \
        f"mode {row.mode} vs published 0.0001"
    print("criterion 11: all three rows within 10%")


# ---------------------------------------------------------------------------
# criterion 12: worker count must not move a byte of output


def test_criterion_12_worker_reproducibility(tmp_path):
    sim_cfg = tmp_path / "sim.cfg"
    sim_cfg.write_text(
        "out_dir = {}\nvariant = svj_factor\nn_stocks = 3\nn_times = 70\n"
        "n_factors = 1\nalpha = 0.8\nloadings = 1.2\nb = -3.5\nseed = 12\n"
        .format(tmp_path / "sim"), encoding="utf-8")
    assert cli.run_command("simulate", sim_cfg, ()) == 0
    full = pd.read_csv(tmp_path / "sim" / "panel.csv", dtype=str)
    full.iloc[:60].to_csv(tmp_path / "ins.csv", index=False)
    full.iloc[60:].to_csv(tmp_path / "oos.csv", index=False)

    fit_cfg = tmp_path / "fit.cfg"
    fit_cfg.write_text(
        "out_dir = PLACEHOLDER\ndata = {}\nvariant = svj_factor\n"
        "n_factors = 1\niterations = 320\nburn_in = 120\nmin_days = 1\n"
        "seed = 6\npath_stride = 2\n".format(tmp_path / "ins.csv"),
        encoding="utf-8")
    fc_cfg = tmp_path / "fc.cfg"
    fc_cfg.write_text(
        "out_dir = PLACEHOLDER\nfit_dir = PLACEHOLDER\ndata = {}\n"
        "n_particles = 60\nbridge_sweeps = 1\ncalibration_sweeps = 20\n"
        "seed = 8\n".format(tmp_path / "oos.csv"), encoding="utf-8")

    for w in (1, 4, 8):
        assert cli.run_command("fit", fit_cfg, (
            f"out_dir={tmp_path / f'fit{w}'}", f"workers={w}")) == 0
        assert cli.run_command("forecast", fc_cfg, (
            f"out_dir={tmp_path / f'fc{w}'}",
            f"fit_dir={tmp_path / f'fit{w}'}", f"workers={w}")) == 0

    for run in ("fit", "fc"):
        base = sorted((tmp_path / f"{run}1").glob("*.csv"))
        assert base
        for w in (4, 8):
            for ref in base:
                other = tmp_path / f"{run}{w}" / ref.name
                assert ref.read_bytes() == other.read_bytes(), (run, w,
                                                                ref.name)
    print("criterion 12: fit and forecast CSVs byte-identical at "
          "1, 4, 8 workers")
