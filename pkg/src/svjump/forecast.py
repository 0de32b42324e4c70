"""Out-of-sample machinery: per-stock particle filters, annealed importance
sampling for the factor variant, and predictive Bayes factor assembly.

Throughout, model parameters are held fixed at their in-sample posterior
means; only latent states move.  All weight arithmetic is in log space.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.special import gammaln, logsumexp

from . import model, samplers
from .model import FactorParams, PriorSpec, StockParams

DEFAULT_PARTICLES = 1000
DEFAULT_BRIDGE_SWEEPS = 5
COUNT_TRUNCATION = 10


class ForecastError(RuntimeError):
    """Degenerate weights or inconsistent forecasting inputs."""


# ---------------------------------------------------------------------------
# predictive densities


def predictive_logdensity(r, h, log_count_pmf, mu_xi, s2_xi):
    """log sum_n p(n) N(r | n mu_xi, exp(h) + n s2_xi).

    The count support is the trailing axis of ``log_count_pmf``; all other
    arguments broadcast against its leading axes.  The pmf is the
    truncated head of the predictive count distribution and is used
    unnormalized, matching the truncated-series convention.
    """
    r = np.asarray(r, dtype=float)[..., None]
    h = np.asarray(h, dtype=float)[..., None]
    mu = np.asarray(mu_xi, dtype=float)[..., None]
    s2 = np.asarray(s2_xi, dtype=float)[..., None]
    lp = np.asarray(log_count_pmf, dtype=float)
    nn = np.arange(lp.shape[-1], dtype=float)
    with np.errstate(over="ignore"):
        var = np.exp(h) + nn * s2
        ll = -0.5 * (model.LOG_2PI + np.log(var) + (r - nn * mu) ** 2 / var)
    return logsumexp(ll + lp, axis=-1)


def poisson_count_logpmf(lam_dt, truncation: int = COUNT_TRUNCATION):
    """Head of the Poisson log-pmf on n = 0..truncation; the rate
    broadcasts along leading axes."""
    lam = np.asarray(lam_dt, dtype=float)[..., None]
    if np.any(lam <= 0):
        raise ValueError("count rates must be positive")
    nn = np.arange(truncation + 1, dtype=float)
    return nn * np.log(lam) - lam - gammaln(nn + 1)


def nb_count_logpmf(dt: float, shape: float, rate: float,
                    truncation: int = COUNT_TRUNCATION) -> np.ndarray:
    """Head of the gamma-mixed (negative binomial) count log-pmf, the
    count predictive when each cell's intensity is an untracked
    Gam(shape, rate) draw."""
    return model.nb_marginal_logpmf(np.arange(truncation + 1), shape, rate, dt)


# ---------------------------------------------------------------------------
# per-stock particle filter


@dataclass
class ParticleCloud:
    """Terminal state of one particle filter run."""

    variant: str
    h: np.ndarray
    log_weights: np.ndarray
    ancestors: np.ndarray
    ess: float
    log_increments: np.ndarray
    resample_count: int

    @property
    def n_particles(self) -> int:
        return self.h.size


def particle_filter(h_draws, params: StockParams, out_returns, out_deltas,
                    n_particles: int = DEFAULT_PARTICLES,
                    rng: np.random.Generator | None = None,
                    variant: str = "svj_independent",
                    intensity_shape: float = 1.0, intensity_rate: float = 50.0,
                    truncation: int = COUNT_TRUNCATION, seed: int = 0,
                    return_cloud: bool = False):
    """One-stock predictive decomposition by sequential Monte Carlo.

    ``h_draws`` are posterior draws of the final in-sample log-variance;
    they seed the particles (resampled with replacement if their count
    differs from ``n_particles``).  Returns the per-step predictive
    log-likelihood increments, whose running sum estimates the log
    marginal likelihood of the out-of-sample stretch without bias on the
    likelihood scale.

    Multinomial resampling triggers when the effective sample size drops
    below half the particle count; the step estimate then normalizes by
    the particle count instead of the previous weight sum.
    """
    if variant not in ("sv", "svj_independent"):
        raise ValueError("direct filtering covers only the per-stock "
                         "variants; use the importance-sampling ensemble "
                         "for factor-driven intensities")
    if rng is None:
        rng = np.random.default_rng(seed)
    h_draws = np.asarray(h_draws, dtype=float).ravel()
    r = np.asarray(out_returns, dtype=float).ravel()
    dts = np.asarray(out_deltas, dtype=float).ravel()
    if h_draws.size == 0 or not np.all(np.isfinite(h_draws)):
        raise ValueError("need finite posterior draws of the final state")
    if r.size != dts.size:
        raise ValueError("returns and time increments differ in length")
    if params.sigma2_eta < 0:
        raise ValueError("negative innovation variance")

    S = int(n_particles)
    h = (h_draws.copy() if h_draws.size == S
         else rng.choice(h_draws, size=S, replace=True))
    sd = math.sqrt(params.sigma2_eta)
    log_w = np.zeros(S)
    ancestors = np.arange(S)
    increments = np.empty(r.size)
    ess = float(S)
    resamples = 0
    for t in range(r.size):
        if t > 0:
            lw = log_w - logsumexp(log_w)
            ess = float(np.exp(-logsumexp(2.0 * lw)))
            if ess < S / 2.0:
                probs = np.exp(lw)
                ancestors = rng.choice(S, size=S, replace=True,
                                       p=probs / probs.sum())
                h = h[ancestors]
                log_w = np.zeros(S)
                resamples += 1
            else:
                ancestors = np.arange(S)
        prev_total = logsumexp(log_w)
        h = params.mu + params.phi * (h - params.mu) \
            + sd * rng.standard_normal(S)
        if variant == "sv":
            step = model.norm_logpdf(r[t], 0.0, np.exp(h))
        else:
            log_pn = nb_count_logpmf(float(dts[t]), intensity_shape,
                                     intensity_rate, truncation)
            step = predictive_logdensity(r[t], h, log_pn,
                                         params.mu_xi, params.sigma2_xi)
        log_w = log_w + step
        total = logsumexp(log_w)
        if not np.isfinite(total):
            raise ForecastError(
                f"all particle weights vanished at out-of-sample step {t + 1}")
        increments[t] = total - prev_total

    if not return_cloud:
        return increments
    lw = log_w - logsumexp(log_w)
    ess = float(np.exp(-logsumexp(2.0 * lw)))
    cloud = ParticleCloud(variant=variant, h=h, log_weights=log_w,
                          ancestors=ancestors, ess=ess,
                          log_increments=increments,
                          resample_count=resamples)
    return increments, cloud


# ---------------------------------------------------------------------------
# annealed importance sampling for the factor variant


@dataclass
class AisEnsemble:
    """Latent-path trajectories extended one observation at a time.

    Arrays are preallocated up to the forecasting horizon; ``length``
    counts the observations currently conditioned on, so columns
    0..length of the state paths are meaningful.  Global weights multiply
    the panel predictive density of each new observation; per-stock
    weights multiply that stock's factor alone, which is what keeps
    their variance usable for stock-level marginals.
    """

    h: np.ndarray                       # (S, p, Lmax+1)
    f: np.ndarray                       # (S, K, Lmax+1)
    counts: np.ndarray                  # (S, p, Lmax)
    values: np.ndarray                  # (p, Lmax)
    deltas: np.ndarray                  # (p, Lmax)
    length: int
    in_sample: int
    log_omega: np.ndarray               # (S, p)
    log_Omega: np.ndarray               # (S,)
    rngs: list
    vol_tuning: list
    factor_tuning: samplers.AuxTuning
    truncation: int
    per_stock_logml: list = field(default_factory=list)
    global_logml: list = field(default_factory=list)

    @property
    def n_trajectories(self) -> int:
        return self.h.shape[0]

    @property
    def n_steps(self) -> int:
        return len(self.global_logml)

    def per_stock_curve(self) -> np.ndarray:
        """Cumulative per-stock log marginals, one row per step."""
        return np.array(self.per_stock_logml)

    def product_curve(self) -> np.ndarray:
        """Cumulative product-form panel log marginals per step."""
        return self.per_stock_curve().sum(axis=1)

    def global_curve(self) -> np.ndarray:
        """Cumulative joint-weight panel log marginals per step."""
        return np.array(self.global_logml)


def _check_factor_inputs(stock_params, factor_params, K):
    if factor_params.n_factors != K:
        raise ValueError("factor coefficient count does not match paths")
    for sp in stock_params:
        if sp.w.size != K:
            raise ValueError("loading vector length does not match paths")


def _latent_sweep(rng, h, f, counts, values, deltas, L, stock_params,
                  factor_params, vol_tuning, factor_tuning, prior) -> None:
    """One in-place latent refresh at fixed parameters: volatility paths,
    jump counts, then factor paths, each targeting the posterior given
    the first L observations.  Jump sizes stay integrated out."""
    K = f.shape[0]
    b = np.array([sp.b for sp in stock_params])
    w = np.vstack([sp.w for sp in stock_params]) if K else np.zeros((len(stock_params), 0))
    lam = model.intensity_from_factors(b, w, f[:, :L + 1],
                                       factor_params.lambda_star)
    for i, sp in enumerate(stock_params):
        hi, _, _, _ = samplers.agrad_update_volatility(
            rng, h[i, :L + 1], sp.phi, sp.sigma2_eta, sp.mu, values[i, :L],
            counts[i, :L], sp.mu_xi, sp.sigma2_xi, prior, vol_tuning[i],
            update_hyperparams=False)
        h[i, :L + 1] = hi
        counts[i, :L] = samplers.sample_jump_counts_row(
            rng, values[i, :L], hi[1:], deltas[i, :L] * lam[i],
            sp.mu_xi, sp.sigma2_xi)
    if K:
        f_new, _, _ = samplers.agrad_update_factors(
            rng, f[:, :L + 1], factor_params.alpha, b, w, counts[:, :L],
            deltas[:, :L], factor_params.lambda_star, factor_tuning,
            update_hyperparams=False)
        f[:, :L + 1] = f_new


def ais_init(h_paths, f_paths, n_paths, values, deltas, stock_params,
             factor_params: FactorParams, horizon: int,
             n_trajectories: int = DEFAULT_PARTICLES, seed: int = 0,
             truncation: int = COUNT_TRUNCATION,
             calibration_sweeps: int = 200) -> AisEnsemble:
    """Build the trajectory ensemble from in-sample posterior path draws.

    Draws are recycled with replacement when fewer than
    ``n_trajectories`` are supplied.  A short adaptation run on a cloned
    trajectory tunes the latent-move step sizes once; the tuned kernels
    are then frozen and shared by every trajectory and bridging stage.
    """
    h_paths = np.asarray(h_paths, dtype=float)
    f_paths = np.asarray(f_paths, dtype=float)
    n_paths = np.asarray(n_paths)
    values = np.asarray(values, dtype=float)
    deltas = np.asarray(deltas, dtype=float)
    D, p, T1 = h_paths.shape
    T = T1 - 1
    K = f_paths.shape[1]
    if f_paths.shape[0] != D or n_paths.shape != (D, p, T):
        raise ValueError("posterior path draws have inconsistent shapes")
    if values.shape != (p, T) or deltas.shape != (p, T):
        raise ValueError("panel arrays do not match the path draws")
    if len(stock_params) != p:
        raise ValueError("need one parameter set per stock")
    if horizon < 1:
        raise ValueError("horizon must be at least one step")
    _check_factor_inputs(stock_params, factor_params, K)

    S = int(n_trajectories)
    ss = np.random.SeedSequence(seed)
    children = ss.spawn(S + 2)
    pick_rng = np.random.default_rng(children[S])
    idx = (np.arange(S) if D == S
           else pick_rng.choice(D, size=S, replace=True))

    Lmax = T + horizon
    h = np.zeros((S, p, Lmax + 1))
    f = np.zeros((S, K, Lmax + 1))
    counts = np.zeros((S, p, Lmax), dtype=np.int64)
    h[:, :, :T + 1] = h_paths[idx]
    f[:, :, :T + 1] = f_paths[idx]
    counts[:, :, :T] = n_paths[idx]
    vals = np.zeros((p, Lmax))
    dts = np.ones((p, Lmax))
    vals[:, :T] = values
    dts[:, :T] = deltas

    vol_tuning = [samplers.AuxTuning() for _ in range(p)]
    factor_tuning = samplers.AuxTuning()
    if calibration_sweeps:
        cal_rng = np.random.default_rng(children[S + 1])
        ch, cf = h[0].copy(), f[0].copy()
        cn = counts[0].copy()
        prior = PriorSpec()
        for _ in range(calibration_sweeps):
            _latent_sweep(cal_rng, ch, cf, cn, vals, dts, T, stock_params,
                          factor_params, vol_tuning, factor_tuning, prior)
    for tn in vol_tuning:
        tn.freeze()
    factor_tuning.freeze()

    return AisEnsemble(
        h=h, f=f, counts=counts, values=vals, deltas=dts, length=T,
        in_sample=T, log_omega=np.zeros((S, p)), log_Omega=np.zeros(S),
        rngs=[np.random.default_rng(c) for c in children[:S]],
        vol_tuning=vol_tuning, factor_tuning=factor_tuning,
        truncation=truncation)


def ais_extend(ensemble: AisEnsemble, next_returns, next_deltas,
               stock_params, factor_params: FactorParams,
               bridge_sweeps: int = DEFAULT_BRIDGE_SWEEPS,
               pool: ThreadPoolExecutor | None = None) -> AisEnsemble:
    """Advance every trajectory by one out-of-sample observation.

    From the second step on, each trajectory is first refreshed toward
    the posterior given everything observed so far by ``bridge_sweeps``
    latent sweeps, then extended by the state transitions, and finally
    reweighted by the predictive density of the new observation: jointly
    for the global weights, stock by stock for the per-stock weights.
    """
    L = ensemble.length
    p = ensemble.h.shape[1]
    K = ensemble.f.shape[1]
    if L >= ensemble.values.shape[1]:
        raise ForecastError("ensemble already extended to its horizon")
    _check_factor_inputs(stock_params, factor_params, K)
    r_new = np.asarray(next_returns, dtype=float).ravel()
    dt_new = np.asarray(next_deltas, dtype=float).ravel()
    if r_new.size != p or dt_new.size != p:
        raise ValueError("need one return and one time increment per stock")
    ensemble.values[:, L] = r_new
    ensemble.deltas[:, L] = dt_new

    b = np.array([sp.b for sp in stock_params])
    w = np.vstack([sp.w for sp in stock_params]) if K else np.zeros((p, 0))
    mu = np.array([sp.mu for sp in stock_params])
    phi = np.array([sp.phi for sp in stock_params])
    sd = np.sqrt([sp.sigma2_eta for sp in stock_params])
    mu_xi = np.array([sp.mu_xi for sp in stock_params])
    s2_xi = np.array([sp.sigma2_xi for sp in stock_params])
    bridging = ensemble.n_steps > 0 and bridge_sweeps > 0
    prior = PriorSpec()

    def advance(s: int) -> np.ndarray:
        rng = ensemble.rngs[s]
        hs, fs, cs = ensemble.h[s], ensemble.f[s], ensemble.counts[s]
        if bridging:
            for _ in range(bridge_sweeps):
                _latent_sweep(rng, hs, fs, cs, ensemble.values,
                              ensemble.deltas, L, stock_params, factor_params,
                              ensemble.vol_tuning, ensemble.factor_tuning,
                              prior)
        if K:
            fs[:, L + 1] = (factor_params.alpha * fs[:, L]
                            + rng.standard_normal(K))
        hs[:, L + 1] = mu + phi * (hs[:, L] - mu) + sd * rng.standard_normal(p)
        lam = factor_params.lambda_star * model.sigmoid(b + w @ fs[:, L + 1])
        log_pn = poisson_count_logpmf(dt_new * lam, ensemble.truncation)
        step = predictive_logdensity(r_new, hs[:, L + 1], log_pn,
                                     mu_xi, s2_xi)
        # the weight marginalizes the new cell's jump count, so the count
        # enters the trajectory through its exact conditional; later
        # bridge sweeps condition on it and would be biased by the zero
        # placeholder left by preallocation
        for i in range(p):
            ensemble.counts[s, i, L] = samplers.sample_jump_counts_row(
                rng, r_new[i:i + 1], hs[i:i + 1, L + 1],
                dt_new[i:i + 1] * lam[i:i + 1], mu_xi[i], s2_xi[i])[0]
        return step

    S = ensemble.n_trajectories
    if pool is not None and S > 1:
        steps = list(pool.map(advance, range(S)))
    else:
        steps = [advance(s) for s in range(S)]
    incr = np.vstack(steps)
    ensemble.log_omega += incr
    ensemble.log_Omega += incr.sum(axis=1)
    ensemble.length = L + 1

    log_s = math.log(S)
    per_stock = logsumexp(ensemble.log_omega, axis=0) - log_s
    glob = float(logsumexp(ensemble.log_Omega) - log_s)
    if not (np.all(np.isfinite(per_stock)) and np.isfinite(glob)):
        raise ForecastError(
            f"trajectory weights vanished at out-of-sample step "
            f"{ensemble.n_steps + 1}")
    ensemble.per_stock_logml.append(per_stock)
    ensemble.global_logml.append(glob)
    return ensemble


def ais_forecast(h_paths, f_paths, n_paths, values, deltas, stock_params,
                 factor_params: FactorParams, out_values, out_deltas,
                 n_trajectories: int = DEFAULT_PARTICLES,
                 bridge_sweeps: int = DEFAULT_BRIDGE_SWEEPS, seed: int = 0,
                 workers: int = 1, truncation: int = COUNT_TRUNCATION,
                 calibration_sweeps: int = 200) -> AisEnsemble:
    """Initialize the ensemble and run it across the whole horizon."""
    out_values = np.asarray(out_values, dtype=float)
    out_deltas = np.asarray(out_deltas, dtype=float)
    if out_values.shape != out_deltas.shape or out_values.ndim != 2:
        raise ValueError("out-of-sample arrays must share a (p, steps) shape")
    horizon = out_values.shape[1]
    ens = ais_init(h_paths, f_paths, n_paths, values, deltas, stock_params,
                   factor_params, horizon, n_trajectories, seed, truncation,
                   calibration_sweeps)
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for j in range(horizon):
            ais_extend(ens, out_values[:, j], out_deltas[:, j], stock_params,
                       factor_params, bridge_sweeps, pool)
    finally:
        if pool is not None:
            pool.shutdown()
    return ens


# ---------------------------------------------------------------------------
# Bayes factors


def bayes_factor_series(numer_increments, denom_increments) -> np.ndarray:
    """Log predictive Bayes factors at every horizon from two series of
    per-step log marginal-likelihood increments."""
    a = np.asarray(numer_increments, dtype=float)
    d = np.asarray(denom_increments, dtype=float)
    if a.shape != d.shape:
        raise ValueError("increment series differ in length")
    return np.cumsum(a) - np.cumsum(d)


def write_bayes_factor_csv(path, dates, numer_increments, denom_increments,
                           labels=("model_a", "model_b"),
                           per_stock_numer=None, per_stock_denom=None,
                           stock_names=None) -> None:
    """Emit the cumulative log marginals and log Bayes factors as CSV.

    Per-stock columns appear when both per-stock cumulative log-marginal
    matrices (steps as rows) are supplied.
    """
    a = np.asarray(numer_increments, dtype=float)
    d = np.asarray(denom_increments, dtype=float)
    if a.shape != d.shape:
        raise ValueError("increment series differ in length")
    steps = np.arange(1, a.size + 1)
    if len(dates) != a.size:
        raise ValueError("need one date per out-of-sample step")
    cols = {
        "step": steps,
        "date": list(dates),
        f"logml_{labels[0]}": np.cumsum(a),
        f"logml_{labels[1]}": np.cumsum(d),
        "log_bf": bayes_factor_series(a, d),
    }
    if per_stock_numer is not None and per_stock_denom is not None:
        pn = np.asarray(per_stock_numer, dtype=float)
        pdn = np.asarray(per_stock_denom, dtype=float)
        if pn.shape != pdn.shape or pn.shape[0] != a.size:
            raise ValueError("per-stock matrices must be steps x stocks")
        names = (stock_names if stock_names is not None
                 else [f"stock{i}" for i in range(pn.shape[1])])
        for i, name in enumerate(names):
            cols[f"log_bf_{name}"] = pn[:, i] - pdn[:, i]
    pd.DataFrame(cols).to_csv(path, index=False, float_format="%.17g")
